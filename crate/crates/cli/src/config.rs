//! Run configuration files: the training configuration plus dataset and
//! output locations, with `key=value` overrides applied before parsing.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use warpseg_train::{DataSpec, TrainConfig};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "WARPSEG_OUT_DIR";
pub const RESOLVED_CONFIG: &str = "run.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub seed: u64,
    pub train: usize,
    pub eval: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::from(DataSpec::default())
    }
}

impl From<DataSpec> for DataConfig {
    fn from(s: DataSpec) -> Self {
        DataConfig {
            seed: s.seed,
            train: s.train,
            eval: s.eval,
            height: s.height,
            width: s.width,
            classes: s.classes,
        }
    }
}

impl DataConfig {
    pub fn spec(&self) -> DataSpec {
        DataSpec {
            seed: self.seed,
            train: self.train,
            eval: self.eval,
            height: self.height,
            width: self.width,
            classes: self.classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Checkpoint to resume from; `out_dir/checkpoint` when resuming without one.
    pub checkpoint: Option<PathBuf>,
    /// Save a checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_every: usize,
    /// Eval samples written as image strips at each evaluation.
    pub dump_images: usize,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let out = std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out"));
        RunConfig {
            data_dir: PathBuf::from("data"),
            out_dir: out,
            checkpoint: None,
            checkpoint_every: 1000,
            dump_images: 4,
            data: DataConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` of the form
    /// `dotted.key=toml-value` and deserializes. Unknown keys are errors.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse().with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid run configuration")?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RESOLVED_CONFIG), self.to_toml())?;
        Ok(())
    }
}

fn apply_override(table: &mut toml::Table, text: &str) -> Result<()> {
    let Some((key, raw)) = text.split_once('=') else {
        bail!("override {text:?} is not key=value");
    };
    let key = key.trim();
    let raw = raw.trim();
    // Bare words are taken as strings so `train.mode=ads` works unquoted.
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override {key:?}: {p:?} is not a table"),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use warpseg_train::Mode;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::load(
            None,
            &[
                "train.mode=supervised".into(),
                "train.student_optimizer.lr=0.5".into(),
                "data.train=12".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.mode, Mode::Supervised);
        assert_eq!(cfg.train.student_optimizer.lr, 0.5);
        assert_eq!(cfg.data.train, 12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::load(None, &["train.lamda1=3".into()]).is_err());
        assert!(RunConfig::load(None, &["outdir=x".into()]).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::load(None, &["train.iterations=7".into()]).unwrap();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
