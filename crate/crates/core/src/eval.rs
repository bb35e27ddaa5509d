//! Metrics, DDIM inference and the sim-to-real experiment harness.

#[cfg(not(feature = "std"))]
use num_traits::Float as _;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::body_model::{forward, BodyMesh, Gender, SmplParams, TemplateSet, N_JOINTS, PARAM_DIM};
use crate::data::{compute_norm_stats, Cover, DatasetConfig, DepthImage, Domain, Sample};
use crate::diffusion::{ddim_sample_batch, DiffusionSchedule};
use crate::network::{Condition, Denoiser, DenoiserConfig};
use crate::nn::Mat;
use crate::train::{run_stage, Checkpoint, Stage, StageInit, StepLog, TrainConfig};
use crate::{rng, Error, Result};

/// Default number of DDIM steps at inference.
pub const INFERENCE_STEPS: usize = 5;
const EVAL_BATCH: usize = 50;

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Mean per-joint position error in millimetres.
pub fn mpjpe(pred: &[[f64; 3]; N_JOINTS], gt: &[[f64; 3]; N_JOINTS]) -> f64 {
    pred.iter().zip(gt).map(|(a, b)| dist(a, b)).sum::<f64>() / N_JOINTS as f64 * 1000.0
}

/// Mean per-vertex error in millimetres.
pub fn pve(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::shape("mesh vertices", gt.len(), pred.len()));
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| dist(a, b)).sum::<f64>() / pred.len() as f64 * 1000.0)
}

/// A checkpoint's denoiser ready for sampling.
pub struct Predictor {
    pub net: Denoiser<f32>,
    pub stats: crate::data::NormStats,
    pub schedule: DiffusionSchedule,
}

impl Predictor {
    pub fn new(ck: &Checkpoint) -> Result<Self> {
        let net = Denoiser::new(ck.network.clone(), 0)?.with_weights(ck.weights.clone())?;
        Ok(Self {
            net,
            stats: ck.stats.clone(),
            schedule: ck.schedule.clone(),
        })
    }

    /// One DDIM draw per input, each started from the noise of its own seed.
    pub fn predict_batch(
        &self,
        inputs: &[(&DepthImage, Gender)],
        seeds: &[u64],
        n_steps: usize,
    ) -> Result<Vec<SmplParams>> {
        if inputs.len() != seeds.len() {
            return Err(Error::shape("inference seeds", inputs.len(), seeds.len()));
        }
        let cfg = &self.net.config;
        for (d, _) in inputs {
            if (d.h, d.w) != (cfg.image_h, cfg.image_w) {
                return Err(Error::IncompatibleCheckpoint(alloc::format!(
                    "checkpoint expects {}x{} depth, got {}x{}",
                    cfg.image_h,
                    cfg.image_w,
                    d.h,
                    d.w
                )));
            }
        }
        let conds: Vec<Condition> = inputs
            .iter()
            .map(|(d, g)| Condition {
                depth: &d.pixels,
                gender: *g,
            })
            .collect();
        let z = ddim_sample_batch(
            |xs, t| {
                let x = Mat::<f32>::from_rows(xs);
                let out = self.net.predict(&x, &alloc::vec![t; xs.len()], &conds)?;
                Ok(out.to_rows())
            },
            seeds,
            PARAM_DIM,
            n_steps,
            &self.schedule,
        )?;
        z.iter()
            .map(|zi| SmplParams::unpack(&self.stats.latent.destandardize(zi)))
            .collect()
    }
}

/// Recovers the body from one depth image.
pub fn infer(
    depth: &DepthImage,
    gender: Gender,
    ck: &Checkpoint,
    templates: &TemplateSet,
    n_steps: usize,
    seed: u64,
) -> Result<(SmplParams, BodyMesh)> {
    let params = Predictor::new(ck)?.predict_batch(&[(depth, gender)], &[seed], n_steps)?[0];
    let mesh = forward(&params, gender, templates)?;
    Ok((params, mesh))
}

/// Metrics of the samples under one cover condition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoverMetrics {
    pub n: usize,
    pub mpjpe_mm: f64,
    pub pve_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mpjpe_mm: f64,
    pub pve_mm: f64,
    pub per_cover: BTreeMap<String, CoverMetrics>,
    pub n_samples: usize,
    /// SHA-256 of the evaluated model (configuration, statistics, weights).
    pub config_digest: String,
}

pub fn checkpoint_digest(ck: &Checkpoint) -> String {
    let mut h = Sha256::new();
    h.update(alloc::format!("{:?}|{:?}|{:?}|{}", ck.network, ck.train, ck.stats, ck.step).as_bytes());
    for p in &ck.weights.params {
        h.update(p.name.as_bytes());
        for v in &p.data {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| alloc::format!("{b:02x}")).collect()
}

/// Seed of the DDIM draw for dataset item `index`.
pub fn eval_seed(seed: u64, index: usize) -> u64 {
    rng::derive_seed(seed, 0xe7a1_0000 ^ index as u64)
}

/// Metrics of one deterministic DDIM draw per sample, overall and per cover.
pub fn evaluate(
    data: &[Sample],
    ck: &Checkpoint,
    templates: &TemplateSet,
    n_steps: usize,
    seed: u64,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let predictor = Predictor::new(ck)?;
    let mut per_cover: BTreeMap<String, CoverMetrics> = BTreeMap::new();
    let (mut sum_j, mut sum_v) = (0.0, 0.0);
    for (chunk_i, chunk) in data.chunks(EVAL_BATCH).enumerate() {
        let inputs: Vec<(&DepthImage, Gender)> = chunk.iter().map(|s| (&s.depth, s.gender)).collect();
        let seeds: Vec<u64> = (0..chunk.len()).map(|k| eval_seed(seed, chunk_i * EVAL_BATCH + k)).collect();
        let preds = predictor.predict_batch(&inputs, &seeds, n_steps)?;
        for (s, p) in chunk.iter().zip(&preds) {
            let pm = forward(p, s.gender, templates)?;
            let gm = forward(&s.params, s.gender, templates)?;
            let (j, v) = (mpjpe(&pm.joints, &gm.joints), pve(&pm.vertices, &gm.vertices)?);
            sum_j += j;
            sum_v += v;
            let e = per_cover.entry(s.cover.name().into()).or_default();
            e.n += 1;
            e.mpjpe_mm += j;
            e.pve_mm += v;
        }
    }
    for m in per_cover.values_mut() {
        m.mpjpe_mm /= m.n as f64;
        m.pve_mm /= m.n as f64;
    }
    let n = data.len() as f64;
    Ok(EvalReport {
        mpjpe_mm: sum_j / n,
        pve_mm: sum_v / n,
        per_cover,
        n_samples: data.len(),
        config_digest: checkpoint_digest(ck),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    SimOnly,
    SimFinetune,
    Scratch,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::SimOnly => "sim-only",
            ModelKind::SimFinetune => "sim+finetune",
            ModelKind::Scratch => "scratch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S2rConfig {
    pub synthetic: DatasetConfig,
    pub real_train: DatasetConfig,
    pub real_test: DatasetConfig,
    pub network: DenoiserConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub inference_steps: usize,
    pub eval_seed: u64,
    /// Also train from scratch on each real fraction.
    pub scratch: bool,
}

impl Default for S2rConfig {
    fn default() -> Self {
        Self {
            synthetic: DatasetConfig {
                n_samples: 5000,
                seed: 11,
                ..DatasetConfig::default()
            },
            real_train: DatasetConfig {
                n_samples: 400,
                seed: 12,
                domain: Domain::PseudoReal,
                participants: (1, 80),
                ..DatasetConfig::default()
            },
            real_test: DatasetConfig {
                n_samples: 200,
                seed: 13,
                domain: Domain::PseudoReal,
                participants: (81, 102),
                ..DatasetConfig::default()
            },
            network: DenoiserConfig {
                n_down_blocks: 5,
                base_channels: 8,
                ..DenoiserConfig::default()
            },
            pretrain: TrainConfig {
                stage: Stage::Synthetic,
                lr_init: 1e-3,
                synthetic_steps: 2000,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                stage: Stage::Finetune,
                lr_init: 1e-3,
                finetune_epochs: 40,
                ..TrainConfig::default()
            },
            fractions: alloc::vec![0.1, 0.25, 0.5, 1.0],
            seeds: alloc::vec![0, 1, 2],
            inference_steps: INFERENCE_STEPS,
            eval_seed: 0,
            scratch: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S2rRow {
    pub seed: u64,
    pub fraction: f64,
    pub model: ModelKind,
    pub n_real: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct S2rTable {
    pub rows: Vec<S2rRow>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl S2rTable {
    /// Median MPJPE over seeds; sim-only rows match any fraction.
    pub fn median_mpjpe(&self, model: ModelKind, fraction: f64) -> Option<f64> {
        median(
            self.rows
                .iter()
                .filter(|r| r.model == model && (model == ModelKind::SimOnly || r.fraction == fraction))
                .map(|r| r.report.mpjpe_mm)
                .collect(),
        )
    }

    /// Median of one cover's MPJPE over seeds.
    pub fn median_cover_mpjpe(&self, model: ModelKind, fraction: f64, cover: Cover) -> Option<f64> {
        median(
            self.rows
                .iter()
                .filter(|r| r.model == model && r.fraction == fraction)
                .filter_map(|r| r.report.per_cover.get(cover.name()).map(|m| m.mpjpe_mm))
                .collect(),
        )
    }
}

/// Number of real samples used at `fraction`.
pub fn fraction_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).min(n)
}

/// Nested subsets: the first `fraction_count(n, f)` entries of one seeded
/// permutation.
pub fn real_subset(data: &[Sample], fraction: f64, seed: u64) -> Vec<Sample> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut rng::stream(rng::derive_seed(seed, 0x5b5e7), 0));
    idx[..fraction_count(data.len(), fraction)].iter().map(|&i| data[i].clone()).collect()
}

/// Pre-generated datasets of the experiment.
pub struct S2rData {
    pub synthetic: Vec<Sample>,
    pub real_train: Vec<Sample>,
    pub real_test: Vec<Sample>,
}

impl S2rData {
    pub fn generate(cfg: &S2rConfig, templates: &TemplateSet) -> Result<Self> {
        Ok(Self {
            synthetic: crate::data::generate_dataset(&cfg.synthetic, templates)?,
            real_train: crate::data::generate_dataset(&cfg.real_train, templates)?,
            real_test: crate::data::generate_dataset(&cfg.real_test, templates)?,
        })
    }
}

/// Trains and evaluates sim-only, sim+finetune and scratch models for every
/// seed and real fraction. `progress` receives a line per finished model.
pub fn s2r_experiment(
    cfg: &S2rConfig,
    data: &S2rData,
    templates: &TemplateSet,
    progress: &mut dyn FnMut(&str),
) -> Result<S2rTable> {
    let scene = &cfg.synthetic.scene;
    let stats = compute_norm_stats(&data.synthetic, templates)?;
    let mut table = S2rTable::default();
    let mut quiet = |_: &StepLog| {};
    for &seed in &cfg.seeds {
        let eval = |ck: &Checkpoint| evaluate(&data.real_test, ck, templates, cfg.inference_steps, cfg.eval_seed);
        let pre_cfg = TrainConfig {
            seed: rng::derive_seed(seed, 1),
            ..cfg.pretrain.clone()
        };
        let pretrained = run_stage(
            &data.synthetic,
            templates,
            scene,
            &pre_cfg,
            StageInit::Fresh {
                network: cfg.network.clone(),
                stats: stats.clone(),
            },
            &mut quiet,
        )?;
        let report = eval(&pretrained)?;
        progress(&alloc::format!("seed {seed} sim-only mpjpe {:.2} mm", report.mpjpe_mm));
        table.rows.push(S2rRow {
            seed,
            fraction: 0.0,
            model: ModelKind::SimOnly,
            n_real: 0,
            report,
        });
        for &f in &cfg.fractions {
            let subset = real_subset(&data.real_train, f, seed);
            let ft_cfg = TrainConfig {
                stage: Stage::Finetune,
                seed: rng::derive_seed(seed, 2),
                from_scratch: false,
                ..cfg.finetune.clone()
            };
            let ck = run_stage(&subset, templates, scene, &ft_cfg, StageInit::Pretrained(&pretrained), &mut quiet)?;
            let report = eval(&ck)?;
            progress(&alloc::format!("seed {seed} f {f} sim+finetune mpjpe {:.2} mm", report.mpjpe_mm));
            table.rows.push(S2rRow {
                seed,
                fraction: f,
                model: ModelKind::SimFinetune,
                n_real: subset.len(),
                report,
            });
            if cfg.scratch && !subset.is_empty() {
                let sc_cfg = TrainConfig {
                    from_scratch: true,
                    seed: rng::derive_seed(seed, 3),
                    ..ft_cfg
                };
                let init = StageInit::Fresh {
                    network: cfg.network.clone(),
                    stats: stats.clone(),
                };
                let ck = run_stage(&subset, templates, scene, &sc_cfg, init, &mut quiet)?;
                let report = eval(&ck)?;
                progress(&alloc::format!("seed {seed} f {f} scratch mpjpe {:.2} mm", report.mpjpe_mm));
                table.rows.push(S2rRow {
                    seed,
                    fraction: f,
                    model: ModelKind::Scratch,
                    n_real: subset.len(),
                    report,
                });
            }
        }
    }
    Ok(table)
}
