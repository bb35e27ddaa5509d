//! Losses, optimiser and the two-stage training loop.
//!
//! Every source of randomness in a step (batch order, timesteps, noise,
//! augmentation) is a pure function of `(seed, step)`, so a run resumed from
//! a checkpoint continues on the same trajectory as an uninterrupted one.

#[cfg(not(feature = "std"))]
use num_traits::Float as _;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::body_model::{
    axis_angle_to_matrix, euler_xyz_to_matrix, forward_traced, matrix_to_euler_xyz, BodyMesh, Gender, SmplParams,
    TemplateSet, N_BETAS, N_BODY_JOINTS, N_JOINTS, PARAM_DIM, ROT_U_OFFSET, THETA_OFFSET,
};
use crate::data::{augment, AugmentPolicy, NormStats, Sample, SceneConfig};
use crate::diffusion::{make_schedule, q_sample, DiffusionSchedule};
use crate::network::{Condition, Denoiser, DenoiserConfig};
use crate::nn::{Grads, Mat, ParamStore, Scalar};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_beta: f64,
    pub lambda_theta: f64,
    pub lambda_psi: f64,
    pub lambda_j: f64,
    pub vertex_norm: f64,
    pub lambda_v2v: f64,
}

impl LossWeights {
    pub fn from_stats(stats: &NormStats, n_vertices: usize, lambda_v2v: f64) -> Self {
        Self {
            lambda_beta: 1.0 / (N_BETAS as f64 * stats.sigma_beta),
            lambda_theta: 1.0 / ((3 * N_BODY_JOINTS) as f64 * stats.sigma_theta),
            lambda_psi: 1.0 / (6.0 * stats.sigma_psi),
            lambda_j: 1.0 / (N_JOINTS as f64 * stats.sigma_j),
            vertex_norm: 1.0 / (n_vertices as f64 * stats.sigma_v),
            lambda_v2v,
        }
    }
}

/// Parameters together with the mesh they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct Posed {
    pub params: SmplParams,
    pub mesh: BodyMesh,
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `lambda_beta |beta - beta'|_1 + lambda_theta |theta - theta'|_1
/// + lambda_psi (|u - u'|_1 + |v - v'|_1) + lambda_j sum_i |j_i - j'_i|_2`.
pub fn smpl_loss(
    pred: &SmplParams,
    pred_joints: &[[f64; 3]; N_JOINTS],
    gt: &SmplParams,
    gt_joints: &[[f64; 3]; N_JOINTS],
    w: &LossWeights,
) -> f64 {
    let (p, g) = (pred.pack(), gt.pack());
    let joints: f64 = pred_joints.iter().zip(gt_joints).map(|(a, b)| dist(a, b)).sum();
    w.lambda_beta * l1(&p[..N_BETAS], &g[..N_BETAS])
        + w.lambda_theta * l1(&p[THETA_OFFSET..THETA_OFFSET + 3 * N_BODY_JOINTS], &g[THETA_OFFSET..THETA_OFFSET + 3 * N_BODY_JOINTS])
        + w.lambda_psi * l1(&p[ROT_U_OFFSET..PARAM_DIM], &g[ROT_U_OFFSET..PARAM_DIM])
        + w.lambda_j * joints
}

/// `vertex_norm * sum_i |v_i - v'_i|_2`.
pub fn v2v_loss(pred: &[[f64; 3]], gt: &[[f64; 3]], vertex_norm: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::shape("mesh vertices", gt.len(), pred.len()));
    }
    Ok(vertex_norm * pred.iter().zip(gt).map(|(a, b)| dist(a, b)).sum::<f64>())
}

pub fn total_loss(pred: &Posed, gt: &Posed, w: &LossWeights) -> Result<f64> {
    let s = smpl_loss(&pred.params, &pred.mesh.joints, &gt.params, &gt.mesh.joints, w);
    let v = v2v_loss(&pred.mesh.vertices, &gt.mesh.vertices, w.vertex_norm)?;
    Ok(s + w.lambda_v2v * v)
}

/// Gradient of [`total_loss`] split into the direct parameter part and the
/// parts flowing through the posed joints and vertices.
pub struct LossGrad {
    pub loss: f64,
    pub d_params: [f64; PARAM_DIM],
    pub d_joints: [[f64; 3]; N_JOINTS],
    pub d_vertices: Vec<[f64; 3]>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn unit_diff(a: &[f64; 3], b: &[f64; 3], scale: f64) -> [f64; 3] {
    let d = dist(a, b);
    if d == 0.0 {
        return [0.0; 3];
    }
    core::array::from_fn(|i| scale * (a[i] - b[i]) / d)
}

pub fn total_loss_grad(pred: &Posed, gt: &Posed, w: &LossWeights) -> Result<LossGrad> {
    let loss = total_loss(pred, gt, w)?;
    let (p, g) = (pred.params.pack(), gt.params.pack());
    let mut d_params = [0.0; PARAM_DIM];
    for i in 0..PARAM_DIM {
        let lambda = if i < N_BETAS {
            w.lambda_beta
        } else if i < THETA_OFFSET + 3 * N_BODY_JOINTS {
            w.lambda_theta
        } else if i >= ROT_U_OFFSET {
            w.lambda_psi
        } else {
            0.0
        };
        d_params[i] = lambda * sign(p[i] - g[i]);
    }
    let d_joints = core::array::from_fn(|k| unit_diff(&pred.mesh.joints[k], &gt.mesh.joints[k], w.lambda_j));
    let scale = w.lambda_v2v * w.vertex_norm;
    let d_vertices = pred
        .mesh
        .vertices
        .iter()
        .zip(&gt.mesh.vertices)
        .map(|(a, b)| unit_diff(a, b, scale))
        .collect();
    Ok(LossGrad {
        loss,
        d_params,
        d_joints,
        d_vertices,
    })
}

/// Loss of decoding `raw` against `gt`, and its gradient with respect to
/// `raw`.
pub fn decoded_loss_grad(
    raw: &[f64],
    gender: Gender,
    gt: &Posed,
    templates: &TemplateSet,
    w: &LossWeights,
) -> Result<(f64, [f64; PARAM_DIM])> {
    let params = SmplParams::unpack(raw)?;
    let (mesh, trace) = forward_traced(&params, templates.get(gender))?;
    let pred = Posed { params, mesh };
    let g = total_loss_grad(&pred, gt, w)?;
    let mut d = trace.backward(&g.d_joints, &g.d_vertices)?;
    for (a, b) in d.iter_mut().zip(&g.d_params) {
        *a += b;
    }
    Ok((g.loss, d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synthetic,
    Finetune,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub lr_init: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub lambda_v2v: f64,
    /// Step count of the synthetic stage.
    pub synthetic_steps: usize,
    /// Passes over the data in the fine-tuning stage.
    pub finetune_epochs: usize,
    /// Fine-tune stage without a pretrained checkpoint (ablation).
    pub from_scratch: bool,
    pub augment: AugmentPolicy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Synthetic,
            lr_init: 1e-4,
            weight_decay: 5e-4,
            batch_size: 32,
            diffusion_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.2,
            lambda_v2v: 1.0,
            synthetic_steps: 20_000,
            finetune_epochs: 50,
            from_scratch: false,
            augment: AugmentPolicy::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init >= 0.0 && self.lr_init.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::arg("learning rate and weight decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be positive"));
        }
        make_schedule(self.diffusion_steps, self.beta_start, self.beta_end).map(|_| ())
    }

    /// Total optimiser steps of this stage on `n_samples` samples.
    pub fn steps_total(&self, n_samples: usize) -> usize {
        match self.stage {
            Stage::Synthetic => self.synthetic_steps,
            Stage::Finetune => n_samples.div_ceil(self.batch_size) * self.finetune_epochs,
        }
    }
}

/// Constant during the synthetic stage; during fine-tuning
/// `(1 - step / (steps_total + 1)) * lr_init`.
pub fn lr_at(step: usize, stage: Stage, lr_init: f64, steps_total: usize) -> Result<f64> {
    if step > steps_total {
        return Err(Error::StepOutOfRange {
            step,
            total: steps_total,
        });
    }
    Ok(match stage {
        Stage::Synthetic => lr_init,
        Stage::Finetune => (1.0 - step as f64 / (steps_total + 1) as f64) * lr_init,
    })
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(store: &ParamStore<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = store.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &Grads<f32>, lr: f64, weight_decay: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (lr / c1) as f32;
        let c2 = c2 as f32;
        let eps = self.eps as f32;
        let decay = (lr * weight_decay) as f32;
        for (((p, g), m), v) in store.params.iter_mut().zip(&grads.data).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = step * *m / ((*v / c2).sqrt() + eps);
                *w = *w - decay * *w - update;
            }
        }
    }
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: DenoiserConfig,
    pub weights: ParamStore<f32>,
    pub optimizer: AdamW,
    pub stats: NormStats,
    pub schedule: DiffusionSchedule,
    pub train: TrainConfig,
    pub step: usize,
    pub steps_total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Indices of the batch used at `step`: epochs are seeded permutations of
/// the dataset cut into consecutive batches.
pub fn batch_indices(seed: u64, step: usize, n: usize, batch_size: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let per_epoch = n.div_ceil(batch_size);
    let (epoch, k) = (step / per_epoch, step % per_epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(rng::derive_seed(seed, 0xba7c), epoch as u64));
    perm[k * batch_size..((k + 1) * batch_size).min(n)].to_vec()
}

/// Rotates the body about the vertical axis through the origin by `angle`,
/// matching a rotation of the depth image about its centre.
pub fn rotate_params_about_z(params: &SmplParams, angle: f64, rest_root: &[f64; 3]) -> SmplParams {
    let phi = crate::body_model::decode_global_rotation(params.rot_u, params.rot_v)
        .expect("ground-truth rotation is valid");
    let rz = axis_angle_to_matrix([0.0, 0.0, angle]);
    let r = rz * euler_xyz_to_matrix(phi);
    let mut out = *params;
    out.set_global_euler(matrix_to_euler_xyz(&r));
    let j = nalgebra::Vector3::new(rest_root[0], rest_root[1], rest_root[2]);
    let s = nalgebra::Vector3::new(params.transl[0], params.transl[1], params.transl[2]);
    let moved = rz * (j + s) - j;
    out.transl = [moved.x, moved.y, moved.z];
    out
}

/// One training example after noising, ready for the network.
struct Prepared {
    depth: Vec<f32>,
    gender: Gender,
    gt: Posed,
    x_t: Vec<f64>,
    t: usize,
}

fn prepare_item(
    sample: &Sample,
    templates: &TemplateSet,
    stats: &NormStats,
    sched: &DiffusionSchedule,
    scene: &SceneConfig,
    policy: &AugmentPolicy,
    r: &mut rng::Rng,
) -> Result<Prepared> {
    let (depth, rec) = augment(&sample.depth, policy, scene, r);
    let mut params = sample.params;
    if let (true, Some(angle)) = (policy.label_consistent, rec.rotation) {
        let (_, trace) = forward_traced(&params, templates.get(sample.gender))?;
        params = rotate_params_about_z(&params, angle, &trace.rest_joints()[0]);
    }
    let (mesh, _) = forward_traced(&params, templates.get(sample.gender))?;
    let z0 = stats.latent.standardize(&params.pack());
    let t = r.random_range(0..sched.steps());
    let eps = rng::normals(r, PARAM_DIM);
    let x_t = q_sample(&z0, t, &eps, sched)?;
    Ok(Prepared {
        depth: depth.pixels,
        gender: sample.gender,
        gt: Posed { params, mesh },
        x_t,
        t,
    })
}

/// Mean loss over a prepared batch and its gradient with respect to every
/// network weight.
fn batch_loss_grad<T: Scalar>(
    net: &Denoiser<T>,
    items: &[Prepared],
    templates: &TemplateSet,
    stats: &NormStats,
    w: &LossWeights,
) -> Result<(f64, Grads<T>)> {
    let conds: Vec<Condition> = items
        .iter()
        .map(|p| Condition {
            depth: &p.depth,
            gender: p.gender,
        })
        .collect();
    let x_t = Mat::from_rows(&items.iter().map(|p| p.x_t.clone()).collect::<Vec<_>>());
    let t: Vec<usize> = items.iter().map(|p| p.t).collect();
    let (out, cache) = net.forward(&x_t, &t, &conds)?;
    let n = items.len() as f64;
    let mut d_out = Mat::zeros(out.rows, out.cols);
    let mut total = 0.0;
    for (i, item) in items.iter().enumerate() {
        let z: Vec<f64> = out.row(i).iter().map(|v| v.f64()).collect();
        let raw = stats.latent.destandardize(&z);
        let (loss, d_raw) = decoded_loss_grad(&raw, item.gender, &item.gt, templates, w)?;
        total += loss;
        for (j, d) in d_raw.iter().enumerate() {
            d_out.data[i * PARAM_DIM + j] = T::of(d * stats.latent.std[j] / n);
        }
    }
    Ok((total / n, net.backward(&cache, &d_out)))
}

/// Initial state of a stage.
pub enum StageInit<'a> {
    /// New weights; with a fine-tune config this is the from-scratch ablation.
    Fresh { network: DenoiserConfig, stats: NormStats },
    /// Start a new stage from a finished checkpoint's weights and statistics.
    Pretrained(&'a Checkpoint),
    /// Continue an interrupted stage.
    Resume(&'a Checkpoint),
}

pub struct Trainer<'a> {
    pub net: Denoiser<f32>,
    pub optimizer: AdamW,
    pub stats: NormStats,
    pub schedule: DiffusionSchedule,
    pub config: TrainConfig,
    pub weights: LossWeights,
    pub step: usize,
    pub steps_total: usize,
    templates: &'a TemplateSet,
    scene: SceneConfig,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        init: StageInit,
        templates: &'a TemplateSet,
        scene: &SceneConfig,
        n_samples: usize,
    ) -> Result<Self> {
        config.validate()?;
        let schedule = make_schedule(config.diffusion_steps, config.beta_start, config.beta_end)?;
        let steps_total = config.steps_total(n_samples);
        let (net, optimizer, stats, step) = match init {
            StageInit::Fresh { network, stats } => {
                if config.stage == Stage::Finetune && !config.from_scratch {
                    return Err(Error::IncompatibleCheckpoint(
                        "fine-tuning needs a pretrained checkpoint unless from_scratch is set".into(),
                    ));
                }
                let net = Denoiser::new(network, rng::derive_seed(config.seed, 0x1417))?;
                let opt = AdamW::new(&net.store);
                (net, opt, stats, 0)
            }
            StageInit::Pretrained(ck) => {
                let net = Denoiser::new(ck.network.clone(), 0)?.with_weights(ck.weights.clone())?;
                let opt = AdamW::new(&net.store);
                (net, opt, ck.stats.clone(), 0)
            }
            StageInit::Resume(ck) => {
                if ck.train != config {
                    return Err(Error::IncompatibleCheckpoint(
                        "resumed checkpoint was trained with a different configuration".into(),
                    ));
                }
                if ck.steps_total != steps_total {
                    return Err(Error::IncompatibleCheckpoint(alloc::format!(
                        "checkpoint expects {} steps, dataset gives {steps_total}",
                        ck.steps_total
                    )));
                }
                let net = Denoiser::new(ck.network.clone(), 0)?.with_weights(ck.weights.clone())?;
                (net, ck.optimizer.clone(), ck.stats.clone(), ck.step)
            }
        };
        if (net.config.image_h, net.config.image_w) != (scene.image_h, scene.image_w) {
            return Err(Error::IncompatibleCheckpoint(alloc::format!(
                "network expects {}x{} images, scene renders {}x{}",
                net.config.image_h,
                net.config.image_w,
                scene.image_h,
                scene.image_w
            )));
        }
        let weights = LossWeights::from_stats(&stats, templates.n_vertices(), config.lambda_v2v);
        Ok(Self {
            net,
            optimizer,
            stats,
            schedule,
            config,
            weights,
            step,
            steps_total,
            templates,
            scene: scene.clone(),
        })
    }

    pub fn done(&self) -> bool {
        self.step >= self.steps_total
    }

    /// Runs the optimiser step number `self.step` on its batch of `data`.
    pub fn train_step(&mut self, data: &[Sample]) -> Result<StepLog> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let lr = lr_at(self.step, self.config.stage, self.config.lr_init, self.steps_total)?;
        let idx = batch_indices(self.config.seed, self.step, data.len(), self.config.batch_size);
        let step_seed = rng::derive_seed(self.config.seed, 0x57e9_0000 ^ self.step as u64);
        let items = idx
            .iter()
            .enumerate()
            .map(|(slot, &i)| {
                let mut r = rng::stream(step_seed, slot as u64);
                prepare_item(
                    &data[i],
                    self.templates,
                    &self.stats,
                    &self.schedule,
                    &self.scene,
                    &self.config.augment,
                    &mut r,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = batch_loss_grad(&self.net, &items, self.templates, &self.stats, &self.weights)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail: alloc::format!("loss {loss}, batch {idx:?}"),
            });
        }
        self.optimizer
            .step(&mut self.net.store, &grads, lr, self.config.weight_decay);
        let log = StepLog {
            step: self.step,
            lr,
            loss,
        };
        self.step += 1;
        Ok(log)
    }

    /// Trains until `until` steps (capped at the stage total) have run.
    pub fn run_until(&mut self, data: &[Sample], until: usize, log: &mut dyn FnMut(&StepLog)) -> Result<()> {
        while self.step < until.min(self.steps_total) {
            let entry = self.train_step(data)?;
            log(&entry);
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            network: self.net.config.clone(),
            weights: self.net.store.clone(),
            optimizer: self.optimizer.clone(),
            stats: self.stats.clone(),
            schedule: self.schedule.clone(),
            train: self.config.clone(),
            step: self.step,
            steps_total: self.steps_total,
        }
    }
}

/// Runs a whole stage and returns its final checkpoint.
pub fn run_stage(
    data: &[Sample],
    templates: &TemplateSet,
    scene: &SceneConfig,
    config: &TrainConfig,
    init: StageInit,
    log: &mut dyn FnMut(&StepLog),
) -> Result<Checkpoint> {
    if config.stage == Stage::Synthetic && data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trainer = Trainer::new(config.clone(), init, templates, scene, data.len())?;
    trainer.run_until(data, usize::MAX, log)?;
    Ok(trainer.checkpoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{forward, make_toy_template};
    use crate::data::{compute_norm_stats, generate_dataset, DatasetConfig};

    fn posed(params: SmplParams, set: &TemplateSet) -> Posed {
        let mesh = forward(&params, Gender::Male, set).unwrap();
        Posed { params, mesh }
    }

    fn unit_weights() -> LossWeights {
        LossWeights {
            lambda_beta: 0.7,
            lambda_theta: 0.3,
            lambda_psi: 0.9,
            lambda_j: 1.3,
            vertex_norm: 0.01,
            lambda_v2v: 1.0,
        }
    }

    #[test]
    fn lr_schedule() {
        assert_eq!(lr_at(0, Stage::Finetune, 1e-4, 9).unwrap(), 1e-4);
        assert_eq!(lr_at(5, Stage::Finetune, 1e-4, 9).unwrap(), 0.5 * 1e-4);
        assert_eq!(lr_at(9, Stage::Finetune, 1e-4, 9).unwrap(), (1.0 - 9.0 / 10.0) * 1e-4);
        for s in [0, 3, 17] {
            assert_eq!(lr_at(s, Stage::Synthetic, 2e-4, 17).unwrap(), 2e-4);
        }
        assert!(lr_at(10, Stage::Finetune, 1e-4, 9).is_err());
    }

    #[test]
    fn decoded_gradient_matches_finite_differences() {
        let set = make_toy_template(60, 2).unwrap();
        let w = unit_weights();
        let mut r = rng::stream(3, 3);
        let mut gt_p = SmplParams::identity();
        gt_p.beta[2] = 0.4;
        gt_p.theta[3] = [0.2, -0.1, 0.3];
        let gt = posed(gt_p, &set);
        let raw: Vec<f64> = gt_p.pack().iter().map(|v| v + r.random_range(-0.2..0.2)).collect();
        let (_, grad) = decoded_loss_grad(&raw, Gender::Male, &gt, &set, &w).unwrap();
        let f = |x: &[f64]| {
            let p = SmplParams::unpack(x).unwrap();
            total_loss(&posed(p, &set), &gt, &w).unwrap()
        };
        for i in 0..PARAM_DIM {
            let (mut a, mut b) = (raw.clone(), raw.clone());
            a[i] += 1e-7;
            b[i] -= 1e-7;
            let fd = (f(&a) - f(&b)) / 2e-7;
            assert!((fd - grad[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn zero_lr_keeps_weights() {
        let net = Denoiser::<f32>::new(
            DenoiserConfig {
                image_h: 8,
                image_w: 8,
                n_down_blocks: 1,
                n_attention_blocks: 1,
                base_channels: 2,
                latent_dim: 4,
                head_hidden: 4,
                ..DenoiserConfig::default()
            },
            0,
        )
        .unwrap();
        let mut store = net.store.clone();
        let mut grads = store.zeros_like();
        for g in grads.data.iter_mut().flatten() {
            *g = 0.3;
        }
        let mut opt = AdamW::new(&store);
        opt.step(&mut store, &grads, 0.0, 5e-4);
        assert_eq!(store, net.store);
        opt.step(&mut store, &grads, 1e-3, 5e-4);
        assert_ne!(store, net.store);
    }

    #[test]
    fn batches_cover_each_epoch_once() {
        let mut seen = vec![0; 10];
        for step in 0..4 {
            for i in batch_indices(1, step, 10, 3) {
                seen[i] += 1;
            }
        }
        assert_eq!(seen, vec![1; 10]);
        assert_eq!(batch_indices(1, 3, 10, 3).len(), 1);
        assert_eq!(batch_indices(1, 6, 10, 3), batch_indices(1, 6, 10, 3));
    }

    #[test]
    fn label_consistent_rotation_moves_mesh_rigidly() {
        let set = make_toy_template(60, 0).unwrap();
        let mut p = SmplParams::identity();
        p.set_global_euler([0.2, -0.1, 0.4]);
        p.transl = [0.05, -0.1, 0.02];
        p.theta[0] = [0.3, 0.1, 0.0];
        let (mesh, trace) = forward_traced(&p, &set.male).unwrap();
        let a = 0.3;
        let q = rotate_params_about_z(&p, a, &trace.rest_joints()[0]);
        let moved = forward(&q, Gender::Male, &set).unwrap();
        let rz = axis_angle_to_matrix([0.0, 0.0, a]);
        for (v, m) in mesh.vertices.iter().zip(&moved.vertices) {
            let e = rz * nalgebra::Vector3::new(v[0], v[1], v[2]);
            assert!((e.x - m[0]).abs() < 1e-9 && (e.y - m[1]).abs() < 1e-9 && (e.z - m[2]).abs() < 1e-9);
        }
    }

    #[test]
    fn fine_tune_needs_checkpoint_and_counts_steps() {
        let set = make_toy_template(60, 0).unwrap();
        let scene = SceneConfig::default();
        let data = generate_dataset(
            &DatasetConfig {
                n_samples: 3,
                ..DatasetConfig::default()
            },
            &set,
        )
        .unwrap();
        let stats = compute_norm_stats(&data, &set).unwrap();
        let cfg = TrainConfig {
            stage: Stage::Finetune,
            batch_size: 2,
            finetune_epochs: 4,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.steps_total(3), 8);
        assert_eq!(cfg.steps_total(0), 0);
        let init = StageInit::Fresh {
            network: DenoiserConfig {
                n_down_blocks: 5,
                ..DenoiserConfig::default()
            },
            stats,
        };
        assert!(matches!(
            Trainer::new(cfg, init, &set, &scene, 3),
            Err(Error::IncompatibleCheckpoint(_))
        ));
    }
}
