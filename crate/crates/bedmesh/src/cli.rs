//! Command-line driver. Every command reads its inputs from and writes its
//! artifacts under one output directory, plus a `manifest-<command>.json`.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bedmesh_core::body_model::{forward, PARAM_DIM};
use bedmesh_core::data::{compute_norm_stats, generate_dataset, DatasetConfig, Sample};
use bedmesh_core::eval::{eval_seed, evaluate, infer, real_subset, s2r_experiment, S2rData};
use bedmesh_core::train::{StageInit, StepLog, Trainer};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, load_settings, schema_keys, Settings};
use crate::error::{CliError, Result};
use crate::io::{read_checkpoint, read_dataset, write_checkpoint, write_dataset};
use crate::report::{emit_plots, plot_points, read_csv, table_rows, write_csv, PlotPoint};

/// Environment variable that sets the output root when `--output-dir` is
/// not given.
pub const OUTPUT_ENV: &str = "BEDMESH_OUTPUT_DIR";
pub const DEFAULT_OUTPUT: &str = "runs";

#[derive(Debug, Clone, PartialEq, Parser)]
#[command(name = "bedmesh", version, about = "In-bed human mesh recovery from overhead depth with a conditional diffusion model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct Common {
    /// TOML settings file layered over the built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `dotted.key=value` override, applied after the file; repeatable.
    #[arg(long = "set", short = 's', global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Artifact root (default: $BEDMESH_OUTPUT_DIR, then ./runs).
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Seed of the command's random streams.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Synthetic,
    RealTrain,
    RealTest,
    All,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Generate datasets into data/.
    GenData {
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
    },
    /// Synthetic training stage.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from an interrupted checkpoint of this stage.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Write the checkpoint every N steps (0 = only at the end).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: usize,
        /// Evaluate on this dataset every `eval_every` steps.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        eval_every: usize,
    },
    /// Fine-tuning stage on pseudo-real data.
    Finetune {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Pretrained checkpoint (default: checkpoints/synthetic.bmc).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Share of the real training set to use.
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        /// Train from fresh weights instead of a pretrained checkpoint.
        #[arg(long)]
        scratch: bool,
    },
    /// Evaluate a checkpoint on a labelled dataset.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Recover the body for one sample of a dataset.
    Infer {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Sim-only versus sim+finetune versus scratch over real-data fractions.
    S2rExp,
    /// Redraw the experiment plots from a table.
    Plot {
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Train { .. } => "train",
            Command::Finetune { .. } => "finetune",
            Command::Eval { .. } => "eval",
            Command::Infer { .. } => "infer",
            Command::S2rExp => "s2r-exp",
            Command::Plot { .. } => "plot",
        }
    }
}

/// A parsed invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub output_dir: PathBuf,
    pub seed: Option<u64>,
}

fn command() -> clap::Command {
    let keys = schema_keys().join("\n  ");
    Cli::command().after_long_help(format!("Settings keys (for --config files and --set):\n  {keys}"))
}

/// Parses `argv` (including the program name). Usage errors carry clap's
/// exit code 2.
pub fn parse_args<I, S>(argv: I) -> std::result::Result<RunConfig, clap::Error>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let matches = command().try_get_matches_from(argv)?;
    let cli = Cli::from_arg_matches(&matches)?;
    let output_dir = cli
        .common
        .output_dir
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    Ok(RunConfig {
        command: cli.command,
        config_path: cli.common.config,
        overrides: cli.common.overrides,
        output_dir,
        seed: cli.common.seed,
    })
}

pub fn help_text() -> String {
    command().render_long_help().to_string()
}

/// Layout of artifacts under the output directory.
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn dataset(&self, name: &str) -> PathBuf {
        self.root.join("data").join(format!("{name}.bmd"))
    }
    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{name}.bmc"))
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(format!("{name}.json"))
    }
    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(format!("{name}.ndjson"))
    }
    pub fn experiment(&self) -> PathBuf {
        self.root.join("experiment")
    }
    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join(format!("manifest-{command}.json"))
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    config_digest: String,
    seeds: BTreeMap<String, u64>,
    /// Paths relative to the output root mapped to their SHA-256.
    artifacts: BTreeMap<String, String>,
}

struct Run {
    settings: Settings,
    layout: Layout,
    seeds: BTreeMap<String, u64>,
    artifacts: Vec<PathBuf>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex(&Sha256::digest(bytes)))
}

/// Append-only newline-delimited training log.
struct StepLogger {
    file: std::fs::File,
    path: PathBuf,
    start: Instant,
}

impl StepLogger {
    fn open(path: PathBuf, append: bool) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(&path)
            .map_err(|e| CliError::io(&path, e))?;
        Ok(Self {
            file,
            path,
            start: Instant::now(),
        })
    }

    fn record(&mut self, value: serde_json::Value) -> Result<()> {
        let mut line = value.to_string();
        line.push('\n');
        self.file.write_all(line.as_bytes()).map_err(|e| CliError::io(&self.path, e))
    }

    fn step(&mut self, log: &StepLog) -> Result<()> {
        let wall = self.start.elapsed().as_secs_f64();
        self.record(serde_json::json!({"step": log.step, "lr": log.lr, "loss": log.loss, "wall_time": wall}))
    }
}

impl Run {
    fn dataset(&self, given: &Option<PathBuf>, default: &str) -> Result<Vec<Sample>> {
        let path = given.clone().unwrap_or_else(|| self.layout.dataset(default));
        Ok(read_dataset(&path)?.0)
    }

    fn gen_data(&mut self, split: Split) -> Result<()> {
        let templates = self.settings.templates()?;
        let d = self.settings.data.clone();
        let all: [(&str, Split, DatasetConfig); 3] = [
            ("synthetic", Split::Synthetic, d.synthetic),
            ("real_train", Split::RealTrain, d.real_train),
            ("real_test", Split::RealTest, d.real_test),
        ];
        for (name, which, cfg) in all {
            if split != Split::All && split != which {
                continue;
            }
            self.seeds.insert(format!("data.{name}"), cfg.seed);
            let samples = generate_dataset(&cfg, &templates)?;
            let path = self.layout.dataset(name);
            write_dataset(&path, &samples, &cfg)?;
            eprintln!("wrote {} samples to {}", samples.len(), path.display());
            self.artifacts.push(path);
        }
        Ok(())
    }

    fn train(
        &mut self,
        data: &Option<PathBuf>,
        resume: &Option<PathBuf>,
        checkpoint_every: usize,
        eval_data: &Option<PathBuf>,
        eval_every: usize,
    ) -> Result<()> {
        let templates = self.settings.templates()?;
        let samples = self.dataset(data, "synthetic")?;
        let cfg = self.settings.train.clone();
        self.seeds.insert("train".into(), cfg.seed);
        let resumed = resume.as_ref().map(|p| read_checkpoint(p)).transpose()?;
        let init = match &resumed {
            Some(ck) => StageInit::Resume(ck),
            None => StageInit::Fresh {
                network: self.settings.network.clone(),
                stats: compute_norm_stats(&samples, &templates)?,
            },
        };
        let scene = &self.settings.data.synthetic.scene;
        let mut trainer = Trainer::new(cfg, init, &templates, scene, samples.len())?;
        let eval_set = eval_data.as_ref().map(|p| read_dataset(p).map(|d| d.0)).transpose()?;
        let out = self.layout.checkpoint("synthetic");
        let mut logger = StepLogger::open(self.layout.log("train"), resumed.is_some())?;
        while !trainer.done() {
            let entry = trainer.train_step(&samples)?;
            logger.step(&entry)?;
            let step = trainer.step;
            if checkpoint_every > 0 && step % checkpoint_every == 0 && !trainer.done() {
                write_checkpoint(&out, &trainer.checkpoint())?;
            }
            if let (Some(set), true) = (&eval_set, eval_every > 0 && step % eval_every == 0) {
                let ev = &self.settings.eval;
                let r = evaluate(set, &trainer.checkpoint(), &templates, ev.inference_steps, ev.seed)?;
                logger.record(serde_json::json!({"step": step, "eval_mpjpe_mm": r.mpjpe_mm, "eval_pve_mm": r.pve_mm}))?;
            }
        }
        write_checkpoint(&out, &trainer.checkpoint())?;
        eprintln!("trained {} steps, checkpoint {}", trainer.step, out.display());
        self.artifacts.push(out);
        Ok(())
    }

    fn finetune(&mut self, data: &Option<PathBuf>, init: &Option<PathBuf>, fraction: f64, scratch: bool) -> Result<()> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(CliError::Config(format!("--fraction {fraction} is outside [0, 1]")));
        }
        let templates = self.settings.templates()?;
        let all = self.dataset(data, "real_train")?;
        let mut cfg = self.settings.finetune.clone();
        cfg.from_scratch = scratch;
        self.seeds.insert("finetune".into(), cfg.seed);
        let samples = real_subset(&all, fraction, cfg.seed);
        let init_path = init.clone().unwrap_or_else(|| self.layout.checkpoint("synthetic"));
        let pretrained = read_checkpoint(&init_path)?;
        let stage_init = if scratch {
            StageInit::Fresh {
                network: pretrained.network.clone(),
                stats: pretrained.stats.clone(),
            }
        } else {
            StageInit::Pretrained(&pretrained)
        };
        let mut logger = StepLogger::open(self.layout.log("finetune"), false)?;
        let scene = &self.settings.data.real_train.scene;
        let mut trainer = Trainer::new(cfg, stage_init, &templates, scene, samples.len())?;
        while !trainer.done() {
            let entry = trainer.train_step(&samples)?;
            logger.step(&entry)?;
        }
        let out = self.layout.checkpoint("finetune");
        write_checkpoint(&out, &trainer.checkpoint())?;
        eprintln!(
            "fine-tuned {} steps on {} samples, checkpoint {}",
            trainer.step,
            samples.len(),
            out.display()
        );
        self.artifacts.push(out);
        Ok(())
    }

    fn eval(&mut self, data: &Option<PathBuf>, checkpoint: &Option<PathBuf>) -> Result<()> {
        let templates = self.settings.templates()?;
        let samples = self.dataset(data, "real_test")?;
        let ck = read_checkpoint(&checkpoint.clone().unwrap_or_else(|| self.layout.checkpoint("finetune")))?;
        let ev = &self.settings.eval;
        self.seeds.insert("eval".into(), ev.seed);
        let report = evaluate(&samples, &ck, &templates, ev.inference_steps, ev.seed)?;
        let out = self.layout.report("eval");
        write_json(&out, &report)?;
        println!("MPJPE {:.2} mm  PVE {:.2} mm  over {} samples", report.mpjpe_mm, report.pve_mm, report.n_samples);
        self.artifacts.push(out);
        Ok(())
    }

    fn infer(&mut self, data: &Option<PathBuf>, checkpoint: &Option<PathBuf>, index: usize) -> Result<()> {
        let templates = self.settings.templates()?;
        let samples = self.dataset(data, "real_test")?;
        let sample = samples
            .get(index)
            .ok_or_else(|| CliError::Config(format!("--index {index} is outside the {} samples", samples.len())))?;
        let ck = read_checkpoint(&checkpoint.clone().unwrap_or_else(|| self.layout.checkpoint("finetune")))?;
        let ev = &self.settings.eval;
        let seed = eval_seed(ev.seed, index);
        self.seeds.insert("infer".into(), seed);
        let (params, mesh) = infer(&sample.depth, sample.gender, &ck, &templates, ev.inference_steps, seed)?;
        let gt = forward(&sample.params, sample.gender, &templates)?;
        let packed: [f64; PARAM_DIM] = params.pack();
        let out = self.layout.root.join("predictions").join(format!("infer-{index}.json"));
        write_json(
            &out,
            &serde_json::json!({
                "index": index,
                "gender": sample.gender,
                "params": packed.to_vec(),
                "joints": mesh.joints,
                "mpjpe_mm": bedmesh_core::eval::mpjpe(&mesh.joints, &gt.joints),
            }),
        )?;
        eprintln!("wrote {}", out.display());
        self.artifacts.push(out);
        Ok(())
    }

    fn s2r(&mut self) -> Result<()> {
        let templates = self.settings.templates()?;
        let cfg = self.settings.s2r();
        for (i, s) in cfg.seeds.iter().enumerate() {
            self.seeds.insert(format!("experiment.{i}"), *s);
        }
        let data = S2rData::generate(&cfg, &templates)?;
        let start = Instant::now();
        let table = s2r_experiment(&cfg, &data, &templates, &mut |line| {
            eprintln!("[{:>6.0}s] {line}", start.elapsed().as_secs_f64())
        })?;
        let dir = self.layout.experiment();
        let rows = table_rows(&table);
        let points = plot_points(&rows);
        let table_path = dir.join("s2r_table.csv");
        let points_path = dir.join("plot_data.csv");
        let json_path = dir.join("s2r_table.json");
        write_csv(&table_path, &rows)?;
        write_csv(&points_path, &points)?;
        write_json(&json_path, &table)?;
        self.artifacts.extend([table_path, points_path, json_path]);
        self.artifacts.extend(emit_plots(&points, &dir)?);
        Ok(())
    }

    fn plot(&mut self, table: &Option<PathBuf>) -> Result<()> {
        let dir = self.layout.experiment();
        let path = table.clone().unwrap_or_else(|| dir.join("plot_data.csv"));
        let points: Vec<PlotPoint> = read_csv(&path)?;
        self.artifacts.extend(emit_plots(&points, &dir)?);
        Ok(())
    }

    fn manifest(&self, command: &str) -> Result<()> {
        let mut artifacts = BTreeMap::new();
        for path in &self.artifacts {
            let rel = path.strip_prefix(&self.layout.root).unwrap_or(path);
            artifacts.insert(rel.to_string_lossy().replace('\\', "/"), file_digest(path)?);
        }
        let m = Manifest {
            command: command.into(),
            config_digest: self.settings.digest(),
            seeds: self.seeds.clone(),
            artifacts,
        };
        write_json(&self.layout.manifest(command), &m)
    }
}

/// Applies `--seed` to the streams the command uses.
fn apply_seed(settings: &mut Settings, command: &Command, seed: u64) {
    match command {
        Command::GenData { .. } => {
            settings.data.synthetic.seed = seed;
            settings.data.real_train.seed = seed.wrapping_add(1);
            settings.data.real_test.seed = seed.wrapping_add(2);
        }
        Command::Train { .. } => settings.train.seed = seed,
        Command::Finetune { .. } => settings.finetune.seed = seed,
        Command::Eval { .. } | Command::Infer { .. } => settings.eval.seed = seed,
        Command::S2rExp => {
            let n = settings.experiment.seeds.len().max(1) as u64;
            settings.experiment.seeds = (0..n).map(|i| seed.wrapping_add(i)).collect();
        }
        Command::Plot { .. } => {}
    }
}

/// Executes one command and writes its manifest.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let mut settings = load_settings(cfg.config_path.as_deref(), &cfg.overrides)?;
    if let Some(seed) = cfg.seed {
        apply_seed(&mut settings, &cfg.command, seed);
    }
    let mut run = Run {
        settings,
        layout: Layout {
            root: cfg.output_dir.clone(),
        },
        seeds: BTreeMap::new(),
        artifacts: Vec::new(),
    };
    match &cfg.command {
        Command::GenData { split } => run.gen_data(*split)?,
        Command::Train {
            data,
            resume,
            checkpoint_every,
            eval_data,
            eval_every,
        } => run.train(data, resume, *checkpoint_every, eval_data, *eval_every)?,
        Command::Finetune {
            data,
            init,
            fraction,
            scratch,
        } => run.finetune(data, init, *fraction, *scratch)?,
        Command::Eval { data, checkpoint } => run.eval(data, checkpoint)?,
        Command::Infer {
            data,
            checkpoint,
            index,
        } => run.infer(data, checkpoint, *index)?,
        Command::S2rExp => run.s2r()?,
        Command::Plot { table } => run.plot(table)?,
    }
    run.manifest(cfg.command.name())
}

/// Parses, runs and maps the outcome to a process exit code.
pub fn main_with_args<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cfg = match parse_args(argv) {
        Ok(cfg) => cfg,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cfg) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
