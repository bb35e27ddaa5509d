use std::path::Path;

use bedmesh::cli::{help_text, main_with_args, parse_args, Command, Split};
use bedmesh::config::{load_settings, schema_keys, Settings};
use bedmesh::report::{emit_plots, curves, PlotPoint};
use bedmesh::CliError;
use bedmesh_core::train::{StageInit, Trainer};

/// Settings small enough for a pipeline to finish in seconds.
const TINY: &[&str] = &[
    "--set",
    "data.synthetic.n_samples=24",
    "--set",
    "data.real_train.n_samples=12",
    "--set",
    "data.real_test.n_samples=6",
    "--set",
    "network.n_down_blocks=5",
    "--set",
    "network.base_channels=4",
    "--set",
    "train.synthetic_steps=4",
    "--set",
    "train.batch_size=8",
    "--set",
    "finetune.batch_size=8",
    "--set",
    "finetune.finetune_epochs=2",
];

fn run(args: &[&str], out: &Path) -> i32 {
    let mut argv = vec!["bedmesh"];
    argv.extend_from_slice(args);
    argv.extend_from_slice(TINY);
    argv.push("--output-dir");
    argv.push(out.to_str().unwrap());
    main_with_args(argv)
}

#[test]
fn parses_commands_and_seeds() {
    let cfg = parse_args(["bedmesh", "gen-data", "--config", "base.toml", "--seed", "7"]).unwrap();
    assert_eq!(cfg.command, Command::GenData { split: Split::All });
    assert_eq!(cfg.seed, Some(7));
    assert_eq!(cfg.config_path.as_deref(), Some(Path::new("base.toml")));

    let err = parse_args(["bedmesh", "eval", "--frobnicate"]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("--frobnicate"));
    assert_eq!(main_with_args(["bedmesh", "train", "--frobnicate"]), 2);
}

#[test]
fn settings_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("base.toml");
    std::fs::write(&path, "[train]\nlr_init = 5e-4\nbatch_size = 16\n").unwrap();
    let s = load_settings(Some(&path), &[]).unwrap();
    assert_eq!((s.train.lr_init, s.train.batch_size), (5e-4, 16));
    let s = load_settings(Some(&path), &["train.lr_init=2e-4".into()]).unwrap();
    assert_eq!((s.train.lr_init, s.train.batch_size), (2e-4, 16));
    assert_eq!(load_settings(None, &[]).unwrap(), Settings::default());

    std::fs::write(&path, "[train]\nlearning_rate = 1.0\n").unwrap();
    let err = load_settings(Some(&path), &[]).unwrap_err();
    assert!(matches!(&err, CliError::Config(m) if m.contains("train.learning_rate")));
    assert_eq!(err.exit_code(), 2);
    assert!(load_settings(None, &["nope=1".into()]).is_err());
    assert!(load_settings(None, &["train.batch_size=0".into()]).is_err());
}

#[test]
fn shipped_defaults_roundtrip_through_toml() {
    let s = Settings::default();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("all.toml");
    std::fs::write(&path, s.to_toml()).unwrap();
    assert_eq!(load_settings(Some(&path), &[]).unwrap(), s);
    for file in ["base.toml", "toy.toml"] {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(file);
        load_settings(Some(&p), &[]).unwrap();
    }
    let toy = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml");
    assert_eq!(load_settings(Some(&toy), &[]).unwrap().s2r(), bedmesh_core::eval::S2rConfig::default());
}

#[test]
fn help_lists_every_settings_key() {
    let help = help_text();
    let keys = schema_keys();
    assert!(keys.len() > 50);
    for k in keys {
        assert!(help.contains(&k), "help lacks {k}");
    }
}

#[test]
fn toy_pipeline_runs_and_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        for cmd in ["gen-data", "train", "finetune", "eval"] {
            assert_eq!(run(&[cmd], out), 0, "{cmd}");
        }
    }
    for file in [
        "reports/eval.json",
        "checkpoints/synthetic.bmc",
        "checkpoints/finetune.bmc",
        "data/synthetic.bmd",
        "manifest-eval.json",
        "manifest-train.json",
    ] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("manifest-finetune.json")).unwrap()).unwrap();
    assert!(manifest["artifacts"]["checkpoints/finetune.bmc"].is_string());
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
    let log = std::fs::read_to_string(a.join("logs/train.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 4);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for k in ["step", "lr", "loss", "wall_time"] {
            assert!(v.get(k).is_some());
        }
    }

    assert_eq!(run(&["infer", "--index", "2"], &a), 0);
    assert_eq!(run(&["eval", "--checkpoint", "missing.bmc"], &a), 3);
    assert_eq!(run(&["finetune", "--fraction", "1.5"], &a), 2);
}

#[test]
fn training_resumes_from_an_interrupted_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    assert_eq!(run(&["gen-data", "--split", "synthetic"], &full), 0);
    assert_eq!(run(&["train", "--checkpoint-every", "2"], &full), 0);
    let expected = std::fs::read(full.join("checkpoints/synthetic.bmc")).unwrap();

    // Two of the four steps, as an interrupted run would leave them.
    let overrides: Vec<String> = TINY.chunks(2).map(|c| c[1].to_string()).collect();
    let settings = load_settings(None, &overrides).unwrap();
    let set = settings.templates().unwrap();
    let (data, _) = bedmesh::io::read_dataset(&full.join("data/synthetic.bmd")).unwrap();
    let stats = bedmesh_core::data::compute_norm_stats(&data, &set).unwrap();
    let init = StageInit::Fresh {
        network: settings.network.clone(),
        stats,
    };
    let mut t = Trainer::new(settings.train.clone(), init, &set, &settings.data.synthetic.scene, data.len()).unwrap();
    t.run_until(&data, 2, &mut |_| {}).unwrap();
    let half = dir.path().join("half.bmc");
    bedmesh::io::write_checkpoint(&half, &t.checkpoint()).unwrap();

    let resumed = dir.path().join("resumed");
    std::fs::create_dir_all(resumed.join("data")).unwrap();
    std::fs::copy(full.join("data/synthetic.bmd"), resumed.join("data/synthetic.bmd")).unwrap();
    assert_eq!(run(&["train", "--resume", half.to_str().unwrap()], &resumed), 0);
    assert_eq!(std::fs::read(resumed.join("checkpoints/synthetic.bmc")).unwrap(), expected);
}

fn point(model: &str, fraction: f64, seed: u64, value: f64) -> PlotPoint {
    PlotPoint {
        model: model.into(),
        fraction,
        metric: "mpjpe_mm".into(),
        seed,
        value,
    }
}

#[test]
fn plots() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_plots(&[], dir.path()).is_err());

    let single = [point("sim-only", 0.0, 0, 90.0)];
    assert!(bedmesh::report::plot_metric(&dir.path().join("one.svg"), &single, "mpjpe_mm").is_ok());

    let mut pts = Vec::new();
    for (i, model) in ["sim-only", "sim+finetune", "scratch"].iter().enumerate() {
        for f in [0.1, 0.25, 0.5, 0.75, 1.0] {
            for seed in 0..3 {
                pts.push(point(model, f, seed, 100.0 - 10.0 * i as f64 - 20.0 * f + seed as f64));
            }
        }
    }
    let c = curves(&pts, "mpjpe_mm");
    assert_eq!(c.len(), 3);
    assert!(c.values().all(|v| v.len() == 5));
    assert_eq!(c["scratch"][0], (0.1, 100.0 - 20.0 - 2.0 + 1.0));

    let p1 = dir.path().join("p1.svg");
    let p2 = dir.path().join("p2.svg");
    bedmesh::report::plot_metric(&p1, &pts, "mpjpe_mm").unwrap();
    bedmesh::report::plot_metric(&p2, &pts, "mpjpe_mm").unwrap();
    let svg = std::fs::read_to_string(&p1).unwrap();
    assert_eq!(svg, std::fs::read_to_string(&p2).unwrap());
    assert!(svg.contains("MPJPE (mm)") && svg.contains("real data used (%)"));
    for model in ["sim-only", "sim+finetune", "scratch"] {
        assert!(svg.contains(model));
    }
}
