//! Binary checkpoint of a [`Trainer`].
//!
//! ```text
//! "PGRW"                      magic
//! u32 version                 currently 1
//! u32 len, len bytes          UTF-8 header: model config and trainer state
//!                             as `key = value` lines
//! u32 count                   named tensors, then for each:
//!   u32 len, len bytes        name
//!   u32 rows, u32 cols
//!   rows·cols f64             row-major payload
//! ```
//!
//! Integers and floats are little-endian. Tensor names are `param/<p>`,
//! `adam_m/<p>` and `adam_v/<p>` for every model parameter `<p>`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{Matrix, OptimizerState, ParameterSet};
use crate::train::Trainer;

pub const MAGIC: &[u8; 4] = b"PGRW";
pub const VERSION: u32 = 1;

const TRAINER_KEYS: [&str; 5] = ["step", "adam_step", "shuffle_seed", "batch_size", "lr"];

fn header_text(t: &Trainer) -> String {
    format!(
        "{}step = {}\nadam_step = {}\nshuffle_seed = {}\nbatch_size = {}\nlr = {}\n",
        t.model.config().to_text(),
        t.step,
        t.optimizer.step(),
        t.shuffle_seed,
        t.batch_size,
        t.lr
    )
}

pub fn encode(t: &Trainer) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let header = header_text(t);
    put_bytes(&mut out, header.as_bytes());

    let params = t.model.params();
    let mut tensors: Vec<(String, &Matrix)> = Vec::new();
    for (name, m) in params.iter() {
        tensors.push((format!("param/{name}"), m));
    }
    for ((name, _), m) in params.iter().zip(t.optimizer.first_moments()) {
        tensors.push((format!("adam_m/{name}"), m));
    }
    for ((name, _), m) in params.iter().zip(t.optimizer.second_moments()) {
        tensors.push((format!("adam_v/{name}"), m));
    }
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, m) in tensors {
        put_bytes(&mut out, name.as_bytes());
        out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(bytes);
}

fn corrupt(msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("corrupt version {VERSION} checkpoint: {msg}"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)? as usize;
        std::str::from_utf8(self.take(n, what)?).map_err(|_| corrupt(format!("{what} is not UTF-8")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Trainer> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (missing PGRW magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads version {VERSION})"
        )));
    }
    let mut r = Reader { bytes, pos: 8 };
    let header = r.text("header")?;

    let mut config_lines = String::new();
    let mut trainer_fields = std::collections::HashMap::new();
    for line in header.lines() {
        match line.split_once('=') {
            Some((k, v)) if TRAINER_KEYS.contains(&k.trim()) => {
                trainer_fields.insert(k.trim(), v.trim());
            }
            _ => {
                config_lines.push_str(line);
                config_lines.push('\n');
            }
        }
    }
    let config = ModelConfig::from_text(&config_lines).map_err(corrupt)?;
    let field = |k: &str| {
        trainer_fields
            .get(k)
            .copied()
            .ok_or_else(|| corrupt(format!("header lacks {k}")))
    };
    let int = |k: &str| -> Result<u64> {
        field(k)?.parse().map_err(|_| corrupt(format!("bad {k}")))
    };
    let step = int("step")?;
    let adam_step = int("adam_step")?;
    let shuffle_seed = int("shuffle_seed")?;
    let batch_size = int("batch_size")? as usize;
    let lr: f64 = field("lr")?.parse().map_err(|_| corrupt("bad lr"))?;

    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.text("tensor name")?.to_string();
        let rows = r.u32("tensor rows")? as usize;
        let cols = r.u32("tensor cols")? as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| corrupt(format!("{name}: dimensions overflow")))?;
        let data = r
            .take(len, &name)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut params = ParameterSet::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (name, m) in tensors {
        if let Some(p) = name.strip_prefix("param/") {
            params.insert(p, m).map_err(corrupt)?;
        } else if name.starts_with("adam_m/") {
            first.push((name, m));
        } else if name.starts_with("adam_v/") {
            second.push((name, m));
        } else {
            return Err(corrupt(format!("unknown tensor {name}")));
        }
    }
    let model = Model::from_parameters(config, params).map_err(corrupt)?;
    let moments = |list: Vec<(String, Matrix)>, prefix: &str| -> Result<Vec<Matrix>> {
        let names: Vec<String> = model.params().iter().map(|(n, _)| format!("{prefix}{n}")).collect();
        if list.len() != names.len() || list.iter().zip(&names).any(|((a, _), b)| a != b) {
            return Err(corrupt(format!("{prefix} tensors do not match the parameters")));
        }
        Ok(list.into_iter().map(|(_, m)| m).collect())
    };
    let first = moments(first, "adam_m/")?;
    let second = moments(second, "adam_v/")?;
    let optimizer = OptimizerState::from_parts(first, second, adam_step);

    let mut trainer = Trainer::new(model, lr, batch_size, shuffle_seed).map_err(corrupt)?;
    if trainer
        .model
        .params()
        .iter()
        .zip(optimizer.first_moments().iter().zip(optimizer.second_moments()))
        .any(|((_, p), (m, v))| p.shape() != m.shape() || p.shape() != v.shape())
    {
        return Err(corrupt("optimizer moment shapes do not match the parameters"));
    }
    trainer.optimizer = optimizer;
    trainer.step = step;
    Ok(trainer)
}

pub fn save(t: &Trainer, path: &Path) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Trainer> {
    decode(&fs::read(path)?).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}
