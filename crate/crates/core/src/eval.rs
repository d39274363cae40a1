//! Dataset likelihood and attention-map export.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{Dataset, QuantizedPointCloud};
use crate::error::{Error, Result};
use crate::model::{Branch, Model};

/// Mean over clouds of each cloud's bits per coordinate.
pub fn dataset_bits_per_coordinate(model: &Model, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Input("cannot evaluate an empty dataset".into()));
    }
    let mut sum = 0.0;
    for (i, cloud) in dataset.clouds().iter().enumerate() {
        sum += model.nll(cloud, dataset.condition(i))?.bits_per_coordinate();
    }
    Ok(sum / dataset.len() as f64)
}

/// Distances from one query's context row to every point feature. Entries
/// for points the query cannot see are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    /// 1-based.
    pub query: usize,
    pub distances: Vec<Option<f64>>,
}

/// `d_j = ‖c_i − f_j‖₂` for `j ≤ i`, where `c_i` is the query's shifted
/// context row and `f_j` the point features before the context operator.
/// `query` is 1-based.
pub fn attention_map(
    model: &Model,
    q: &QuantizedPointCloud,
    query: usize,
    branch: Branch,
    h: Option<&[f64]>,
) -> Result<AttentionMap> {
    if query == 0 || query > q.len() {
        return Err(Error::Input(format!(
            "query index {query} outside 1..={}",
            q.len()
        )));
    }
    let (features, context) = model.branch_context(q.points(), branch, h)?;
    let c = context.row(query - 1);
    let distances = (0..q.len())
        .map(|j| {
            (j < query).then(|| {
                features
                    .row(j)
                    .iter()
                    .zip(c)
                    .map(|(f, c)| (c - f) * (c - f))
                    .sum::<f64>()
                    .sqrt()
            })
        })
        .collect();
    Ok(AttentionMap { query, distances })
}

pub const ATTENTION_HEADER: &str = "index,distance";

/// `index,distance` rows with 1-based indices; unreachable points are `inf`.
pub fn write_attention_csv<W: Write>(map: &AttentionMap, mut out: W) -> Result<()> {
    writeln!(out, "{ATTENTION_HEADER}")?;
    for (j, d) in map.distances.iter().enumerate() {
        match d {
            Some(d) => writeln!(out, "{},{}", j + 1, d)?,
            None => writeln!(out, "{},inf", j + 1)?,
        }
    }
    Ok(())
}

pub fn export_attention_csv(map: &AttentionMap, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_attention_csv(map, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Reads the distance column back; `inf` becomes `None`.
pub fn parse_attention_csv(text: &str, path: &Path) -> Result<Vec<Option<f64>>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == ATTENTION_HEADER => {}
        _ => return Err(Error::parse(path, 1, format!("expected header {ATTENTION_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (_, d) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(path, i + 1, "expected index,distance"))?;
        out.push(match d.trim() {
            "inf" => None,
            v => Some(
                v.parse()
                    .map_err(|_| Error::parse(path, i + 1, format!("bad distance {v:?}")))?,
            ),
        });
    }
    Ok(out)
}
