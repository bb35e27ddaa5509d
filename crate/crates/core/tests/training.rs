use bedmesh_core::body_model::{forward, make_toy_template, Gender, SmplParams, TemplateSet, N_JOINTS};
use bedmesh_core::data::{compute_norm_stats, generate_dataset, AugmentPolicy, DatasetConfig, NormStats, Sample, SceneConfig};
use bedmesh_core::network::DenoiserConfig;
use bedmesh_core::rng;
use bedmesh_core::train::*;
use rand::Rng;

fn toy() -> TemplateSet {
    make_toy_template(240, 0).unwrap()
}

fn weights() -> LossWeights {
    LossWeights {
        lambda_beta: 0.8,
        lambda_theta: 0.05,
        lambda_psi: 0.4,
        lambda_j: 3.0,
        vertex_norm: 0.02,
        lambda_v2v: 1.0,
    }
}

fn posed(p: SmplParams, set: &TemplateSet) -> Posed {
    Posed {
        mesh: forward(&p, Gender::Female, set).unwrap(),
        params: p,
    }
}

fn random_params(r: &mut rng::Rng) -> SmplParams {
    let mut p = SmplParams::identity();
    for b in &mut p.beta {
        *b = r.random_range(-1.5..1.5);
    }
    for j in &mut p.theta {
        *j = [r.random_range(-0.3..0.3), r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)];
    }
    p.transl = [r.random_range(-0.1..0.1), r.random_range(-0.1..0.1), 0.0];
    p.set_global_euler([r.random_range(-0.3..0.3), r.random_range(-0.1..0.1), r.random_range(-0.3..0.3)]);
    p
}

#[test]
fn smpl_loss_examples() {
    let set = toy();
    let w = weights();
    let gt = posed(SmplParams::identity(), &set);
    assert_eq!(smpl_loss(&gt.params, &gt.mesh.joints, &gt.params, &gt.mesh.joints, &w), 0.0);

    let mut p = SmplParams::identity();
    p.beta[4] += 1.0;
    // Joints held fixed so only the beta term is active.
    let l = smpl_loss(&p, &gt.mesh.joints, &gt.params, &gt.mesh.joints, &w);
    assert!((l - w.lambda_beta).abs() < 1e-15);

    let mut r = rng::stream(21, 0);
    for _ in 0..5 {
        let (a, b) = (posed(random_params(&mut r), &set), posed(random_params(&mut r), &set));
        let (x, y) = (a.params, b.params);
        let mut oracle = 0.0;
        for i in 0..10 {
            oracle += w.lambda_beta * (x.beta[i] - y.beta[i]).abs();
        }
        for j in 0..23 {
            for k in 0..3 {
                oracle += w.lambda_theta * (x.theta[j][k] - y.theta[j][k]).abs();
            }
        }
        for k in 0..3 {
            oracle += w.lambda_psi * ((x.rot_u[k] - y.rot_u[k]).abs() + (x.rot_v[k] - y.rot_v[k]).abs());
        }
        for j in 0..N_JOINTS {
            let d: f64 = (0..3).map(|k| (a.mesh.joints[j][k] - b.mesh.joints[j][k]).powi(2)).sum();
            oracle += w.lambda_j * d.sqrt();
        }
        let got = smpl_loss(&x, &a.mesh.joints, &y, &b.mesh.joints, &w);
        assert!((got - oracle).abs() < 1e-12 * oracle.max(1.0));
        assert!(got > 0.0);
    }
}

#[test]
fn v2v_loss_examples() {
    let set = toy();
    let a = posed(SmplParams::identity(), &set).mesh.vertices;
    assert_eq!(v2v_loss(&a, &a, 0.3).unwrap(), 0.0);

    let sigma_v = 0.07;
    let norm = 1.0 / (a.len() as f64 * sigma_v);
    let d = [0.01, -0.02, 0.005];
    let moved: Vec<[f64; 3]> = a.iter().map(|v| [v[0] + d[0], v[1] + d[1], v[2] + d[2]]).collect();
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    assert!((v2v_loss(&moved, &a, norm).unwrap() - len / sigma_v).abs() < 1e-12);

    let mut r = rng::stream(22, 0);
    let b: Vec<[f64; 3]> = a.iter().map(|v| [v[0] + r.random_range(-0.1..0.1), v[1], v[2] - r.random_range(0.0..0.1)]).collect();
    let mut oracle = 0.0;
    for (p, q) in b.iter().zip(&a) {
        oracle += ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
    }
    assert!((v2v_loss(&b, &a, norm).unwrap() - norm * oracle).abs() < 1e-12);
    assert!(v2v_loss(&b[1..], &a, norm).is_err());
}

#[test]
fn total_loss_is_the_weighted_sum() {
    let set = toy();
    let mut r = rng::stream(23, 0);
    let (a, b) = (posed(random_params(&mut r), &set), posed(random_params(&mut r), &set));
    assert_eq!(total_loss(&a, &a, &weights()).unwrap(), 0.0);

    let w0 = LossWeights {
        lambda_v2v: 0.0,
        ..weights()
    };
    let s = smpl_loss(&a.params, &a.mesh.joints, &b.params, &b.mesh.joints, &w0);
    assert_eq!(total_loss(&a, &b, &w0).unwrap(), s);

    let w2 = LossWeights {
        lambda_v2v: 2.0,
        ..weights()
    };
    let v = v2v_loss(&a.mesh.vertices, &b.mesh.vertices, w2.vertex_norm).unwrap();
    assert!((total_loss(&a, &b, &w2).unwrap() - (s + 2.0 * v)).abs() < 1e-12);
}

#[test]
fn loss_weights_follow_the_normalisation() {
    let set = toy();
    let data = generate_dataset(
        &DatasetConfig {
            n_samples: 50,
            ..DatasetConfig::default()
        },
        &set,
    )
    .unwrap();
    let s = compute_norm_stats(&data, &set).unwrap();
    let w = LossWeights::from_stats(&s, 240, 1.0);
    assert_eq!(w.lambda_beta, 1.0 / (10.0 * s.sigma_beta));
    assert_eq!(w.lambda_theta, 1.0 / (69.0 * s.sigma_theta));
    assert_eq!(w.lambda_psi, 1.0 / (6.0 * s.sigma_psi));
    assert_eq!(w.lambda_j, 1.0 / (24.0 * s.sigma_j));
    assert_eq!(w.vertex_norm, 1.0 / (240.0 * s.sigma_v));
    for v in [w.lambda_beta, w.lambda_theta, w.lambda_psi, w.lambda_j, w.vertex_norm] {
        assert!(v.is_finite() && v > 0.0);
    }
}

#[test]
fn learning_rate_schedule() {
    let lr = 1e-4;
    assert_eq!(lr_at(0, Stage::Finetune, lr, 9).unwrap(), lr);
    assert_eq!(lr_at(5, Stage::Finetune, lr, 9).unwrap(), 0.5 * lr);
    assert_eq!(lr_at(9, Stage::Finetune, lr, 9).unwrap(), lr * (1.0 - 9.0 / 10.0));
    // Affine in the step.
    let (a, b, c) = (
        lr_at(2, Stage::Finetune, lr, 40).unwrap(),
        lr_at(3, Stage::Finetune, lr, 40).unwrap(),
        lr_at(4, Stage::Finetune, lr, 40).unwrap(),
    );
    assert!(((b - a) - (c - b)).abs() < 1e-20);
    for step in [0, 1, 500, 1000] {
        assert_eq!(lr_at(step, Stage::Synthetic, lr, 1000).unwrap(), lr);
    }
    assert!(matches!(
        lr_at(10, Stage::Finetune, lr, 9),
        Err(bedmesh_core::Error::StepOutOfRange { step: 10, total: 9 })
    ));
}

#[test]
fn finetune_step_count() {
    let cfg = TrainConfig {
        stage: Stage::Finetune,
        batch_size: 32,
        finetune_epochs: 7,
        ..TrainConfig::default()
    };
    assert_eq!(cfg.steps_total(100), 4 * 7);
    assert_eq!(cfg.steps_total(96), 3 * 7);
    assert_eq!(cfg.steps_total(0), 0);
}

fn tiny_network() -> DenoiserConfig {
    DenoiserConfig {
        image_h: 16,
        image_w: 8,
        n_down_blocks: 2,
        n_attention_blocks: 1,
        base_channels: 4,
        latent_dim: 16,
        head_hidden: 16,
        ..DenoiserConfig::default()
    }
}

fn tiny_scene() -> SceneConfig {
    SceneConfig {
        image_h: 16,
        image_w: 8,
        pixel_pitch: 0.14,
        ..SceneConfig::default()
    }
}

fn tiny_data(set: &TemplateSet, n: usize) -> (Vec<Sample>, NormStats) {
    let cfg = DatasetConfig {
        n_samples: n,
        scene: tiny_scene(),
        ..DatasetConfig::default()
    };
    let data = generate_dataset(&cfg, set).unwrap();
    let stats = compute_norm_stats(&data, set).unwrap();
    (data, stats)
}

fn tiny_train(steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        synthetic_steps: steps,
        lr_init: 1e-3,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_leaves_weights_bitwise() {
    let set = toy();
    let (data, stats) = tiny_data(&set, 6);
    let cfg = TrainConfig {
        lr_init: 0.0,
        ..tiny_train(3)
    };
    let init = StageInit::Fresh {
        network: tiny_network(),
        stats,
    };
    let mut t = Trainer::new(cfg, init, &set, &tiny_scene(), data.len()).unwrap();
    let before = t.net.store.clone();
    t.train_step(&data).unwrap();
    assert_eq!(t.net.store, before);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let set = toy();
    let (data, stats) = tiny_data(&set, 10);
    let cfg = tiny_train(10);
    let fresh = || StageInit::Fresh {
        network: tiny_network(),
        stats: stats.clone(),
    };
    let run = |init| {
        let mut losses = Vec::new();
        let ck = run_stage(&data, &set, &tiny_scene(), &cfg, init, &mut |l: &StepLog| losses.push(l.loss)).unwrap();
        (ck, losses)
    };
    let (a, la) = run(fresh());
    let (b, lb) = run(fresh());
    assert_eq!(la, lb);
    assert_eq!(a, b);
    assert_eq!(a.step, 10);

    let mut t = Trainer::new(cfg.clone(), fresh(), &set, &tiny_scene(), data.len()).unwrap();
    t.run_until(&data, 4, &mut |_| {}).unwrap();
    let mid = t.checkpoint();
    let mut resumed = Trainer::new(cfg.clone(), StageInit::Resume(&mid), &set, &tiny_scene(), data.len()).unwrap();
    let mut tail = Vec::new();
    resumed.run_until(&data, usize::MAX, &mut |l| tail.push(l.loss)).unwrap();
    assert_eq!(tail, la[4..]);
    assert_eq!(resumed.checkpoint(), a);
}

#[test]
fn finetune_with_no_data_returns_the_pretrained_weights() {
    let set = toy();
    let (data, stats) = tiny_data(&set, 6);
    let pre = run_stage(
        &data,
        &set,
        &tiny_scene(),
        &tiny_train(2),
        StageInit::Fresh {
            network: tiny_network(),
            stats,
        },
        &mut |_| {},
    )
    .unwrap();
    let ft_cfg = TrainConfig {
        stage: Stage::Finetune,
        ..tiny_train(0)
    };
    let ft = run_stage(&[], &set, &tiny_scene(), &ft_cfg, StageInit::Pretrained(&pre), &mut |_| {}).unwrap();
    assert_eq!(ft.weights, pre.weights);
    assert_eq!(ft.steps_total, 0);
}

#[test]
fn checkpoints_must_match_the_images() {
    let set = toy();
    let (data, stats) = tiny_data(&set, 4);
    let pre = run_stage(
        &data,
        &set,
        &tiny_scene(),
        &tiny_train(1),
        StageInit::Fresh {
            network: tiny_network(),
            stats,
        },
        &mut |_| {},
    )
    .unwrap();
    let ft_cfg = TrainConfig {
        stage: Stage::Finetune,
        ..tiny_train(0)
    };
    let r = Trainer::new(ft_cfg, StageInit::Pretrained(&pre), &set, &SceneConfig::default(), 4);
    assert!(matches!(r, Err(bedmesh_core::Error::IncompatibleCheckpoint(_))));
}

#[test]
fn label_consistent_augmentation_trains() {
    let set = toy();
    let (data, stats) = tiny_data(&set, 4);
    let cfg = TrainConfig {
        augment: AugmentPolicy {
            p_rotate: 1.0,
            label_consistent: true,
            ..AugmentPolicy::default()
        },
        ..tiny_train(2)
    };
    let init = StageInit::Fresh {
        network: tiny_network(),
        stats,
    };
    let ck = run_stage(&data, &set, &tiny_scene(), &cfg, init, &mut |l| assert!(l.loss.is_finite())).unwrap();
    assert_eq!(ck.step, 2);
}
