//! Template, dataset and checkpoint files on top of [`Container`].

use std::path::Path;

use bedmesh_core::body_model::{BodyTemplate, Gender, SmplParams, TemplateSet, N_BETAS, N_JOINTS, PARAM_DIM};
use bedmesh_core::data::{Cover, DatasetConfig, DepthImage, Domain, NormStats, Sample};
use bedmesh_core::diffusion::DiffusionSchedule;
use bedmesh_core::network::DenoiserConfig;
use bedmesh_core::nn::{Param, ParamStore};
use bedmesh_core::train::{AdamW, Checkpoint, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::{ArrayData, Container};
use crate::error::{CliError, Result};

fn from_json<T: for<'de> Deserialize<'de>>(v: &serde_json::Value, what: &str) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| CliError::Format(format!("{what}: {e}")))
}

fn push_template(c: &mut Container, prefix: &str, t: &BodyTemplate) -> Result<()> {
    let n = t.n_vertices();
    let flat: Vec<f64> = t.rest_vertices.iter().flatten().copied().collect();
    c.push(format!("{prefix}/rest_vertices"), &[n, 3], ArrayData::F64(flat))?;
    c.push(format!("{prefix}/shape_dirs"), &[n, 3, N_BETAS], ArrayData::F64(t.shape_dirs.clone()))?;
    c.push(format!("{prefix}/joint_regressor"), &[N_JOINTS, n], ArrayData::F64(t.joint_regressor.clone()))?;
    c.push(format!("{prefix}/kinematic_parents"), &[N_JOINTS], ArrayData::I32(t.kinematic_parents.to_vec()))?;
    c.push(format!("{prefix}/skin_weights"), &[n, N_JOINTS], ArrayData::F64(t.skin_weights.clone()))?;
    let faces: Vec<i32> = t.faces.iter().flatten().map(|&i| i as i32).collect();
    c.push(format!("{prefix}/faces"), &[t.faces.len(), 3], ArrayData::I32(faces))
}

fn read_template(c: &Container, prefix: &str) -> Result<BodyTemplate> {
    let rest = c.get(&format!("{prefix}/rest_vertices"))?;
    let n = match rest.shape[..] {
        [n, 3] => n,
        _ => return Err(CliError::Format(format!("{prefix}/rest_vertices must be N x 3"))),
    };
    let floats = |name: &str, shape: &[usize]| c.get_shaped(&format!("{prefix}/{name}"), shape)?.to_f64();
    let ints = |name: &str| -> Result<(Vec<i32>, Vec<usize>)> {
        let a = c.get(&format!("{prefix}/{name}"))?;
        match &a.data {
            ArrayData::I32(v) => Ok((v.clone(), a.shape.clone())),
            _ => Err(CliError::Format(format!("{prefix}/{name} must be i32"))),
        }
    };
    let rest_vertices = rest.data.to_f64()?.chunks(3).map(|p| [p[0], p[1], p[2]]).collect();
    let (parents, shape) = ints("kinematic_parents")?;
    if shape != [N_JOINTS] {
        return Err(CliError::Format(format!("{prefix}/kinematic_parents must have {N_JOINTS} entries")));
    }
    let (faces, shape) = ints("faces")?;
    if shape.len() != 2 || shape[1] != 3 {
        return Err(CliError::Format(format!("{prefix}/faces must be F x 3")));
    }
    if faces.iter().any(|&i| i < 0 || i as usize >= n) {
        return Err(CliError::Format(format!("{prefix}/faces index outside the mesh")));
    }
    let t = BodyTemplate {
        rest_vertices,
        shape_dirs: floats("shape_dirs", &[n, 3, N_BETAS])?,
        joint_regressor: floats("joint_regressor", &[N_JOINTS, n])?,
        kinematic_parents: parents.try_into().unwrap(),
        skin_weights: floats("skin_weights", &[n, N_JOINTS])?,
        faces: faces.chunks(3).map(|f| [f[0] as u32, f[1] as u32, f[2] as u32]).collect(),
    };
    Ok(t)
}

/// Writes both genders' templates under the `male/` and `female/` prefixes.
pub fn write_templates(path: &Path, set: &TemplateSet) -> Result<()> {
    let mut c = Container::new("template", json!({}));
    push_template(&mut c, "male", &set.male)?;
    push_template(&mut c, "female", &set.female)?;
    c.write(path)
}

/// Loads and validates a template file. Float arrays may be f32 or f64.
pub fn read_templates(path: &Path) -> Result<TemplateSet> {
    let c = Container::read(path, "template")?;
    Ok(TemplateSet::new(read_template(&c, "male")?, read_template(&c, "female")?)?)
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    config: DatasetConfig,
    n_samples: usize,
}

pub fn dataset_container(samples: &[Sample], config: &DatasetConfig) -> Result<Container> {
    let n = samples.len();
    let (h, w) = samples.first().map_or((config.scene.image_h, config.scene.image_w), |s| (s.depth.h, s.depth.w));
    let mut depth = Vec::with_capacity(n * h * w);
    let mut params = Vec::with_capacity(n * PARAM_DIM);
    let mut gender = Vec::with_capacity(n * 2);
    for s in samples {
        if (s.depth.h, s.depth.w) != (h, w) {
            return Err(CliError::Format("samples differ in image size".into()));
        }
        depth.extend_from_slice(&s.depth.pixels);
        params.extend(s.params.pack().iter().map(|&v| v as f32));
        gender.extend(s.gender.one_hot().iter().map(|&v| v as u8));
    }
    let meta = serde_json::to_value(DatasetMeta {
        config: config.clone(),
        n_samples: n,
    })
    .expect("dataset metadata serializes");
    let mut c = Container::new("dataset", meta);
    c.push("depth", &[n, h, w], ArrayData::F32(depth))?;
    c.push("params", &[n, PARAM_DIM], ArrayData::F32(params))?;
    c.push("gender", &[n, 2], ArrayData::U8(gender))?;
    c.push("cover", &[n], ArrayData::U8(samples.iter().map(|s| s.cover.code()).collect()))?;
    c.push("domain", &[n], ArrayData::U8(samples.iter().map(|s| s.domain.code()).collect()))?;
    Ok(c)
}

/// Writes samples with their generating config. Parameters are stored as
/// f32, which is lossless for generated samples.
pub fn write_dataset(path: &Path, samples: &[Sample], config: &DatasetConfig) -> Result<()> {
    dataset_container(samples, config)?.write(path)
}

pub fn read_dataset(path: &Path) -> Result<(Vec<Sample>, DatasetConfig)> {
    let c = Container::read(path, "dataset")?;
    let meta: DatasetMeta = from_json(&c.meta, "dataset metadata")?;
    let depth = c.get("depth")?;
    let (n, h, w) = match depth.shape[..] {
        [n, h, w] => (n, h, w),
        _ => return Err(CliError::Format("depth must be N x H x W".into())),
    };
    if n != meta.n_samples {
        return Err(CliError::Format(format!("metadata says {} samples, arrays hold {n}", meta.n_samples)));
    }
    let (ArrayData::F32(depth), ArrayData::F32(params), ArrayData::U8(gender), ArrayData::U8(cover), ArrayData::U8(domain)) = (
        &depth.data,
        c.get_shaped("params", &[n, PARAM_DIM])?,
        c.get_shaped("gender", &[n, 2])?,
        c.get_shaped("cover", &[n])?,
        c.get_shaped("domain", &[n])?,
    ) else {
        return Err(CliError::Format("dataset arrays have the wrong types".into()));
    };
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let raw: Vec<f64> = params[i * PARAM_DIM..(i + 1) * PARAM_DIM].iter().map(|&v| v as f64).collect();
        samples.push(Sample {
            depth: DepthImage {
                h,
                w,
                pixels: depth[i * h * w..(i + 1) * h * w].to_vec(),
            },
            params: SmplParams::unpack(&raw)?,
            gender: Gender::from_one_hot([gender[2 * i] as f64, gender[2 * i + 1] as f64])?,
            cover: Cover::from_code(cover[i])?,
            domain: Domain::from_code(domain[i])?,
        });
    }
    Ok((samples, meta.config))
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    network: DenoiserConfig,
    train: TrainConfig,
    stats: NormStats,
    schedule: DiffusionSchedule,
    step: usize,
    steps_total: usize,
    adam: AdamMeta,
}

pub fn checkpoint_container(ck: &Checkpoint) -> Result<Container> {
    let meta = CheckpointMeta {
        network: ck.network.clone(),
        train: ck.train.clone(),
        stats: ck.stats.clone(),
        schedule: ck.schedule.clone(),
        step: ck.step,
        steps_total: ck.steps_total,
        adam: AdamMeta {
            t: ck.optimizer.t,
            beta1: ck.optimizer.beta1,
            beta2: ck.optimizer.beta2,
            eps: ck.optimizer.eps,
        },
    };
    let mut c = Container::new("checkpoint", serde_json::to_value(meta).expect("checkpoint metadata serializes"));
    for (i, p) in ck.weights.params.iter().enumerate() {
        c.push(format!("weights/{}", p.name), &p.shape, ArrayData::F32(p.data.clone()))?;
        c.push(format!("adam_m/{}", p.name), &p.shape, ArrayData::F32(ck.optimizer.m[i].clone()))?;
        c.push(format!("adam_v/{}", p.name), &p.shape, ArrayData::F32(ck.optimizer.v[i].clone()))?;
    }
    Ok(c)
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    checkpoint_container(ck)?.write(path)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c = Container::read(path, "checkpoint")?;
    let meta: CheckpointMeta = from_json(&c.meta, "checkpoint metadata")?;
    let f32s = |name: &str| -> Result<(Vec<f32>, Vec<usize>)> {
        let a = c.get(name)?;
        match &a.data {
            ArrayData::F32(v) => Ok((v.clone(), a.shape.clone())),
            _ => Err(CliError::Format(format!("{name} must be f32"))),
        }
    };
    let mut weights = ParamStore::default();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for a in c.arrays.iter().filter(|a| a.name.starts_with("weights/")) {
        let name = &a.name["weights/".len()..];
        let (data, shape) = f32s(&a.name)?;
        let (mi, ms) = f32s(&format!("adam_m/{name}"))?;
        let (vi, vs) = f32s(&format!("adam_v/{name}"))?;
        if ms != shape || vs != shape {
            return Err(CliError::Format(format!("optimizer moments of {name} do not match its shape")));
        }
        weights.params.push(Param {
            name: name.into(),
            shape,
            data,
        });
        m.push(mi);
        v.push(vi);
    }
    Ok(Checkpoint {
        network: meta.network,
        weights,
        optimizer: AdamW {
            beta1: meta.adam.beta1,
            beta2: meta.adam.beta2,
            eps: meta.adam.eps,
            t: meta.adam.t,
            m,
            v,
        },
        stats: meta.stats,
        schedule: meta.schedule,
        train: meta.train,
        step: meta.step,
        steps_total: meta.steps_total,
    })
}
