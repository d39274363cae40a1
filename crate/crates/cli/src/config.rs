//! Run configuration files: flat `key = value` lines, `#` starts a comment.
//! Relative paths are resolved against the file's directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pointseq::data::Split;
use pointseq::model::ModelConfig;

/// Every accepted key with a one-line description, in `--help` order.
pub const KEYS: &[(&str, &str)] = &[
    ("bins", "quantization bins per axis (default 200)"),
    ("feature_width", "point feature width f (default 128)"),
    ("encoder_hidden", "comma-separated encoder hidden widths (default 64,128)"),
    ("head_hidden", "comma-separated head hidden widths (default 128)"),
    ("context", "ca_mean, ca_max, saca_a or saca_b (default saca_a)"),
    ("condition_dim", "condition vector length, 0 for unconditional (default 0)"),
    ("seed", "seed for initialization, data order and sampling (default 0)"),
    ("lr", "Adam learning rate (default 0.001)"),
    ("batch_size", "clouds per training step (default 8)"),
    ("steps", "total training steps (default 1000)"),
    ("checkpoint_every", "steps between checkpoints (default 100)"),
    ("data", "dataset manifest"),
    ("conditions", "condition CSV aligned with manifest rows"),
    ("loss_log", "loss CSV path (default: <checkpoint>.loss.csv)"),
    ("split", "manifest split to train on (default train)"),
];

pub fn keys_help() -> String {
    let mut s = String::from("Config file keys (key = value, '#' comments):\n");
    for (k, d) in KEYS {
        s.push_str(&format!("  {k:<17} {d}\n"));
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub checkpoint_every: u64,
    pub data: Option<PathBuf>,
    pub conditions: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
    pub split: Split,
    /// Keys given explicitly in the file or on the command line.
    pub explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            lr: 1e-3,
            batch_size: 8,
            steps: 1000,
            checkpoint_every: 100,
            data: None,
            conditions: None,
            loss_log: None,
            split: Split::Train,
            explicit: BTreeSet::new(),
        }
    }
}

fn positive<T: std::str::FromStr + PartialOrd + Default>(value: &str) -> Option<T> {
    value.parse::<T>().ok().filter(|v| *v > T::default())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = format!("{}:{}", path.display(), i + 1);
            let Some((key, value)) = line.split_once('=') else {
                bail!("{at}: expected `key = value`, found {line:?}");
            };
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value, base)
                .with_context(|| format!("{at}: key `{key}`"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key; paths are joined onto `base` when relative.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || base.join(value);
        match key {
            "lr" => {
                self.lr = positive(value).with_context(|| format!("bad learning rate {value:?}"))?
            }
            "batch_size" => {
                self.batch_size = positive(value).with_context(|| format!("bad count {value:?}"))?
            }
            "steps" => {
                self.steps = value
                    .parse()
                    .with_context(|| format!("bad step count {value:?}"))?
            }
            "checkpoint_every" => {
                self.checkpoint_every =
                    positive(value).with_context(|| format!("bad interval {value:?}"))?
            }
            "data" => self.data = Some(path()),
            "conditions" => self.conditions = Some(path()),
            "loss_log" => self.loss_log = Some(path()),
            "split" => self.split = value.parse()?,
            _ => {
                if !self.model.set(key, value)? {
                    bail!("unknown key `{key}`");
                }
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        Ok(())
    }
}
