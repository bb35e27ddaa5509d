//! Run settings: built-in defaults, overlaid by a TOML file, overlaid by
//! `key=value` overrides. Keys absent from the defaults are rejected.

use std::path::Path;

use bedmesh_core::body_model::{make_toy_template, TemplateSet};
use bedmesh_core::data::{DatasetConfig, Domain};
use bedmesh_core::eval::{S2rConfig, INFERENCE_STEPS};
use bedmesh_core::network::DenoiserConfig;
use bedmesh_core::train::{Stage, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSettings {
    /// Template file; empty selects the procedural toy body.
    pub path: String,
    pub toy_vertices: usize,
    pub toy_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSettings {
    pub synthetic: DatasetConfig,
    pub real_train: DatasetConfig,
    pub real_test: DatasetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub inference_steps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSettings {
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub scratch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub template: TemplateSettings,
    pub data: DataSettings,
    pub network: DenoiserConfig,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    pub eval: EvalSettings,
    pub experiment: ExperimentSettings,
}

impl Default for Settings {
    fn default() -> Self {
        let s2r = S2rConfig::default();
        Self {
            template: TemplateSettings {
                path: String::new(),
                toy_vertices: 240,
                toy_seed: 0,
            },
            data: DataSettings {
                synthetic: s2r.synthetic,
                real_train: s2r.real_train,
                real_test: s2r.real_test,
            },
            network: DenoiserConfig::default(),
            train: TrainConfig::default(),
            finetune: TrainConfig {
                stage: Stage::Finetune,
                ..TrainConfig::default()
            },
            eval: EvalSettings {
                inference_steps: INFERENCE_STEPS,
                seed: 0,
            },
            experiment: ExperimentSettings {
                fractions: s2r.fractions,
                seeds: s2r.seeds,
                scratch: true,
            },
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.train.stage != Stage::Synthetic {
            return bad("train.stage must be \"synthetic\"".into());
        }
        if self.finetune.stage != Stage::Finetune {
            return bad("finetune.stage must be \"finetune\"".into());
        }
        for (name, d) in [
            ("synthetic", &self.data.synthetic),
            ("real_train", &self.data.real_train),
            ("real_test", &self.data.real_test),
        ] {
            if (d.scene.image_h, d.scene.image_w) != (self.network.image_h, self.network.image_w) {
                return bad(format!("data.{name}.scene image size differs from network.image_h/image_w"));
            }
        }
        if self.data.synthetic.domain != Domain::Synthetic {
            return bad("data.synthetic.domain must be \"synthetic\"".into());
        }
        if self.experiment.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("experiment.fractions must lie in [0, 1]".into());
        }
        self.network.validate()?;
        self.train.validate()?;
        self.finetune.validate()?;
        Ok(())
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        if self.template.path.is_empty() {
            Ok(make_toy_template(self.template.toy_vertices, self.template.toy_seed)?)
        } else {
            crate::io::read_templates(Path::new(&self.template.path))
        }
    }

    pub fn s2r(&self) -> S2rConfig {
        S2rConfig {
            synthetic: self.data.synthetic.clone(),
            real_train: self.data.real_train.clone(),
            real_test: self.data.real_test.clone(),
            network: self.network.clone(),
            pretrain: self.train.clone(),
            finetune: self.finetune.clone(),
            fractions: self.experiment.fractions.clone(),
            seeds: self.experiment.seeds.clone(),
            inference_steps: self.eval.inference_steps,
            eval_seed: self.eval.seed,
            scratch: self.experiment.scratch,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("settings serialize");
        hex(&Sha256::digest(bytes))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize to TOML")
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn defaults_table() -> Table {
    match Value::try_from(Settings::default()).expect("defaults serialize") {
        Value::Table(t) => t,
        _ => unreachable!("settings serialize to a table"),
    }
}

/// Overlays `src` onto `dst`, refusing keys that `dst` lacks.
fn merge(dst: &mut Table, src: Table, prefix: &str) -> Result<()> {
    for (k, v) in src {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (dst.get_mut(&k), v) {
            (None, _) => return Err(CliError::Config(format!("unknown key `{path}`"))),
            (Some(Value::Table(d)), Value::Table(s)) => merge(d, s, &path)?,
            (Some(Value::Table(_)), _) => return Err(CliError::Config(format!("`{path}` must be a table"))),
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies one `dotted.key=value` override; values use TOML syntax and fall
/// back to a bare string.
fn apply_override(table: &mut Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut nested = Table::new();
    nested.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    for p in parts[..parts.len() - 1].iter().rev() {
        let mut outer = Table::new();
        outer.insert(p.to_string(), Value::Table(nested));
        nested = outer;
    }
    merge(table, nested, "")
}

/// Defaults, then the file at `path` if given, then `overrides` in order.
pub fn load_settings(path: Option<&Path>, overrides: &[String]) -> Result<Settings> {
    let mut table = defaults_table();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file: Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut table, file, "")?;
    }
    for item in overrides {
        apply_override(&mut table, item)?;
    }
    let settings: Settings = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    settings.validate()?;
    Ok(settings)
}

/// Every accepted key in dotted form.
pub fn schema_keys() -> Vec<String> {
    fn walk(t: &Table, prefix: &str, out: &mut Vec<String>) {
        for (k, v) in t {
            let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                Value::Table(sub) => walk(sub, &path, out),
                _ => out.push(path),
            }
        }
    }
    let mut out = Vec::new();
    walk(&defaults_table(), "", &mut out);
    out
}
