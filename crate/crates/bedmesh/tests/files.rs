use bedmesh::container::{ArrayData, Container, FORMAT_VERSION};
use bedmesh::io::*;
use bedmesh::CliError;
use bedmesh_core::body_model::make_toy_template;
use bedmesh_core::data::{compute_norm_stats, generate_dataset, DatasetConfig, Domain, SceneConfig};
use bedmesh_core::network::DenoiserConfig;
use bedmesh_core::train::{StageInit, TrainConfig, Trainer};

fn small_config() -> DatasetConfig {
    DatasetConfig {
        n_samples: 10,
        seed: 4,
        domain: Domain::PseudoReal,
        ..DatasetConfig::default()
    }
}

#[test]
fn container_roundtrip_and_corruption() {
    let mut c = Container::new("demo", serde_json::json!({"k": [1, 2]}));
    c.push("a", &[2, 2], ArrayData::F32(vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE])).unwrap();
    c.push("b", &[3], ArrayData::F64(vec![0.1, 1e-300, -7.0])).unwrap();
    c.push("c", &[2], ArrayData::I32(vec![-1, 7])).unwrap();
    c.push("d", &[0], ArrayData::U8(vec![])).unwrap();
    assert!(c.push("e", &[5], ArrayData::U8(vec![1])).is_err());
    let bytes = c.to_bytes();
    assert_eq!(Container::from_bytes(&bytes).unwrap(), c);

    for cut in [10, 30, bytes.len() - 40, bytes.len() - 1] {
        assert!(matches!(Container::from_bytes(&bytes[..cut]), Err(CliError::Format(_))));
    }
    let mut flipped = bytes.clone();
    let mid = bytes.len() - 50;
    flipped[mid] ^= 1;
    assert!(Container::from_bytes(&flipped).is_err());

    let mut versioned = bytes;
    versioned[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        Container::from_bytes(&versioned),
        Err(CliError::Version { found, expected }) if found == FORMAT_VERSION + 1 && expected == FORMAT_VERSION
    ));
}

#[test]
fn dataset_roundtrip_is_bitwise() {
    let set = make_toy_template(240, 0).unwrap();
    let cfg = small_config();
    let samples = generate_dataset(&cfg, &set).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bmd");
    write_dataset(&path, &samples, &cfg).unwrap();
    let (back, back_cfg) = read_dataset(&path).unwrap();
    assert_eq!(back, samples);
    assert_eq!(back_cfg, cfg);

    let again = dir.path().join("e.bmd");
    write_dataset(&again, &generate_dataset(&cfg, &set).unwrap(), &cfg).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8] = 9;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_dataset(&path), Err(CliError::Version { found: 9, .. })));
    std::fs::write(&path, &bytes[..100]).unwrap();
    assert!(read_dataset(&path).is_err());
}

#[test]
fn template_roundtrip_and_validation() {
    let set = make_toy_template(240, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.bmt");
    write_templates(&path, &set).unwrap();
    assert_eq!(read_templates(&path).unwrap(), set);

    // A template whose skin weights no longer sum to one is rejected.
    let mut c = Container::read(&path, "template").unwrap();
    let a = c.arrays.iter_mut().find(|a| a.name == "male/skin_weights").unwrap();
    if let ArrayData::F64(v) = &mut a.data {
        v[0] += 0.5;
    }
    c.write(&path).unwrap();
    assert!(matches!(read_templates(&path), Err(CliError::Core(_))));

    // Shape mismatch.
    let mut c = Container::new("template", serde_json::json!({}));
    c.push("male/rest_vertices", &[4, 3], ArrayData::F32(vec![0.0; 12])).unwrap();
    c.push("male/shape_dirs", &[3, 3, 10], ArrayData::F32(vec![0.0; 90])).unwrap();
    c.write(&path).unwrap();
    assert!(matches!(read_templates(&path), Err(CliError::Format(_))));
}

#[test]
fn checkpoint_roundtrip_resumes_identically() {
    let set = make_toy_template(240, 0).unwrap();
    let scene = SceneConfig {
        image_h: 16,
        image_w: 8,
        pixel_pitch: 0.14,
        ..SceneConfig::default()
    };
    let data = generate_dataset(
        &DatasetConfig {
            n_samples: 8,
            scene: scene.clone(),
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
        batch_size: 3,
        synthetic_steps: 10,
        lr_init: 1e-3,
        ..TrainConfig::default()
    };
    let fresh = || StageInit::Fresh {
        network: network.clone(),
        stats: stats.clone(),
    };
    let mut full = Trainer::new(cfg.clone(), fresh(), &set, &scene, data.len()).unwrap();
    full.run_until(&data, usize::MAX, &mut |_| {}).unwrap();

    let mut part = Trainer::new(cfg.clone(), fresh(), &set, &scene, data.len()).unwrap();
    part.run_until(&data, 5, &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.bmc");
    write_checkpoint(&path, &part.checkpoint()).unwrap();
    let loaded = read_checkpoint(&path).unwrap();
    assert_eq!(loaded, part.checkpoint());

    let mut resumed = Trainer::new(cfg, StageInit::Resume(&loaded), &set, &scene, data.len()).unwrap();
    resumed.run_until(&data, usize::MAX, &mut |_| {}).unwrap();
    assert_eq!(resumed.checkpoint(), full.checkpoint());
    let other = dir.path().join("d.bmc");
    write_checkpoint(&other, &resumed.checkpoint()).unwrap();
    write_checkpoint(&path, &full.checkpoint()).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&other).unwrap());
}
