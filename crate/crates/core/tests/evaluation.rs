use bedmesh_core::body_model::{make_toy_template, Gender, TemplateSet, N_JOINTS};
use bedmesh_core::data::{compute_norm_stats, generate_dataset, DatasetConfig, DepthImage, Domain, Sample, SceneConfig};
use bedmesh_core::eval::*;
use bedmesh_core::network::DenoiserConfig;
use bedmesh_core::rng;
use bedmesh_core::train::{run_stage, Checkpoint, StageInit, TrainConfig};
use nalgebra::{Rotation3, Vector3};
use rand::Rng;

fn random_points(r: &mut rng::Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
        .collect()
}

#[test]
fn metrics_match_a_brute_force_oracle() {
    let mut r = rng::stream(31, 0);
    let a: [[f64; 3]; N_JOINTS] = random_points(&mut r, N_JOINTS).try_into().unwrap();
    let b: [[f64; 3]; N_JOINTS] = random_points(&mut r, N_JOINTS).try_into().unwrap();
    let mut sum = 0.0;
    for i in 0..N_JOINTS {
        sum += ((a[i][0] - b[i][0]).powi(2) + (a[i][1] - b[i][1]).powi(2) + (a[i][2] - b[i][2]).powi(2)).sqrt();
    }
    assert!((mpjpe(&a, &b) - 1000.0 * sum / 24.0).abs() < 1e-9);

    let (va, vb) = (random_points(&mut r, 240), random_points(&mut r, 240));
    let mut sum = 0.0;
    for (p, q) in va.iter().zip(&vb) {
        sum += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    }
    assert!((pve(&va, &vb).unwrap() - 1000.0 * sum / 240.0).abs() < 1e-9);
}

#[test]
fn metric_closed_forms() {
    let gt = [[0.2, 0.1, 0.5]; N_JOINTS];
    assert_eq!(mpjpe(&gt, &gt), 0.0);
    let off = gt.map(|p| [p[0], p[1] + 0.010, p[2]]);
    assert!((mpjpe(&off, &gt) - 10.0).abs() < 1e-9);

    let v = vec![[0.0; 3]; 100];
    let mut w = v.clone();
    assert_eq!(pve(&v, &w).unwrap(), 0.0);
    w[17] = [0.0, 0.03, 0.04];
    assert!((pve(&w, &v).unwrap() - 50.0 / 100.0).abs() < 1e-12);
}

#[test]
fn metrics_ignore_a_shared_rigid_motion() {
    let mut r = rng::stream(32, 0);
    let a: [[f64; 3]; N_JOINTS] = random_points(&mut r, N_JOINTS).try_into().unwrap();
    let b: [[f64; 3]; N_JOINTS] = random_points(&mut r, N_JOINTS).try_into().unwrap();
    let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
    let t = Vector3::new(0.4, -0.2, 1.5);
    let move_pt = |p: &[f64; 3]| {
        let q = rot * Vector3::new(p[0], p[1], p[2]) + t;
        [q.x, q.y, q.z]
    };
    let (ma, mb) = (a.map(|p| move_pt(&p)), b.map(|p| move_pt(&p)));
    assert!((mpjpe(&a, &b) - mpjpe(&ma, &mb)).abs() < 1e-9);
    assert!((pve(&a, &b).unwrap() - pve(&ma, &mb).unwrap()).abs() < 1e-9);
}

fn scene() -> SceneConfig {
    SceneConfig {
        image_h: 16,
        image_w: 8,
        pixel_pitch: 0.14,
        ..SceneConfig::default()
    }
}

fn setup() -> (TemplateSet, Vec<Sample>, Checkpoint) {
    let set = make_toy_template(240, 0).unwrap();
    let data = generate_dataset(
        &DatasetConfig {
            n_samples: 12,
            scene: scene(),
            domain: Domain::PseudoReal,
            ..DatasetConfig::default()
        },
        &set,
    )
    .unwrap();
    let stats = compute_norm_stats(&data, &set).unwrap();
    let network = DenoiserConfig {
        image_h: 16,
        image_w: 8,
        n_down_blocks: 2,
        n_attention_blocks: 1,
        base_channels: 4,
        latent_dim: 16,
        head_hidden: 16,
        ..DenoiserConfig::default()
    };
    let cfg = TrainConfig {
        batch_size: 4,
        synthetic_steps: 3,
        ..TrainConfig::default()
    };
    let ck = run_stage(&data, &set, &scene(), &cfg, StageInit::Fresh { network, stats }, &mut |_| {}).unwrap();
    (set, data, ck)
}

#[test]
fn inference_is_deterministic_and_decodable() {
    let (set, data, ck) = setup();
    let s = &data[0];
    let a = infer(&s.depth, s.gender, &ck, &set, 5, 7).unwrap();
    let b = infer(&s.depth, s.gender, &ck, &set, 5, 7).unwrap();
    assert_eq!(a, b);
    let one = infer(&s.depth, s.gender, &ck, &set, 1, 7).unwrap();
    assert!(one.0.is_finite() && one.1.is_finite());

    let predictor = Predictor::new(&ck).unwrap();
    let mut r = rng::stream(33, 0);
    let depths: Vec<DepthImage> = (0..100)
        .map(|_| DepthImage {
            h: 16,
            w: 8,
            pixels: (0..128).map(|_| r.random_range(1.5f32..2.0)).collect(),
        })
        .collect();
    let inputs: Vec<(&DepthImage, Gender)> = depths.iter().map(|d| (d, Gender::Female)).collect();
    let seeds: Vec<u64> = (0..100).collect();
    for p in predictor.predict_batch(&inputs, &seeds, 5).unwrap() {
        assert!(p.is_finite());
        bedmesh_core::body_model::forward(&p, Gender::Female, &set).unwrap();
    }

    let wrong = DepthImage::filled(64, 32, 2.0);
    assert!(matches!(
        infer(&wrong, Gender::Male, &ck, &set, 5, 0),
        Err(bedmesh_core::Error::IncompatibleCheckpoint(_))
    ));
}

#[test]
fn reports_aggregate_and_repeat() {
    let (set, data, ck) = setup();
    let a = evaluate(&data, &ck, &set, 5, 3).unwrap();
    let b = evaluate(&data, &ck, &set, 5, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_samples, 12);
    let n: usize = a.per_cover.values().map(|m| m.n).sum();
    assert_eq!(n, 12);
    let weighted: f64 = a.per_cover.values().map(|m| m.n as f64 * m.mpjpe_mm).sum::<f64>() / 12.0;
    assert!((weighted - a.mpjpe_mm).abs() < 1e-9);
    let weighted: f64 = a.per_cover.values().map(|m| m.n as f64 * m.pve_mm).sum::<f64>() / 12.0;
    assert!((weighted - a.pve_mm).abs() < 1e-9);
    assert!(a.mpjpe_mm >= 0.0 && a.pve_mm >= 0.0);
    assert!(matches!(evaluate(&[], &ck, &set, 5, 3), Err(bedmesh_core::Error::EmptyDataset)));
}
