//! Text interchange formats.
//!
//! * XYZ: one `x y z` line per point, single spaces, `\n` endings.
//! * PLY: ASCII, `element vertex N` with float `x`, `y`, `z` properties.
//! * Bins: `bins B` on the first line, then one `x y z` line of integer bin
//!   indices per point, in sequence order.
//! * Conditions: one comma-separated real vector per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{QuantizedPoint, QuantizedPointCloud, RawPointCloud};
use crate::error::{Error, Result};

pub fn write_xyz<W: Write>(cloud: &RawPointCloud, mut out: W) -> Result<()> {
    for p in cloud.points() {
        writeln!(out, "{} {} {}", p[0], p[1], p[2])?;
    }
    Ok(())
}

pub fn save_xyz(cloud: &RawPointCloud, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_xyz(cloud, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn parse_xyz(text: &str, path: &Path) -> Result<RawPointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let mut p = [0.0f64; 3];
        for (slot, tok) in p.iter_mut().zip(&fields) {
            *slot = tok
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad number {tok:?}")))?;
            if !slot.is_finite() {
                return Err(Error::parse(path, lineno, "non-finite coordinate"));
            }
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::parse(path, 1, "no points"));
    }
    RawPointCloud::new(points)
}

pub fn load_xyz(path: &Path) -> Result<RawPointCloud> {
    parse_xyz(&fs::read_to_string(path)?, path)
}

pub fn write_ply<W: Write>(cloud: &RawPointCloud, mut out: W) -> Result<()> {
    write!(
        out,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    )?;
    write_xyz(cloud, out)
}

pub fn save_ply(cloud: &RawPointCloud, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_ply(cloud, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_bins<W: Write>(cloud: &QuantizedPointCloud, mut out: W) -> Result<()> {
    writeln!(out, "bins {}", cloud.bins())?;
    for p in cloud.points() {
        writeln!(out, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

pub fn save_bins(cloud: &QuantizedPointCloud, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_bins(cloud, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Reads a bins file, keeping the stored sequence order.
pub fn load_bins(path: &Path) -> Result<QuantizedPointCloud> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let bins = match lines.next() {
        Some((_, l)) => l
            .strip_prefix("bins ")
            .and_then(|b| b.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::parse(path, 1, "expected header \"bins B\""))?,
        None => return Err(Error::parse(path, 1, "empty file")),
    };
    let mut points = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<u32> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, lineno, "bad bin index"))?;
        if fields.len() != 3 {
            return Err(Error::parse(path, lineno, "expected 3 bin indices"));
        }
        if fields.iter().any(|&b| b as usize >= bins) {
            return Err(Error::parse(path, lineno, format!("bin outside [0, {bins})")));
        }
        points.push(QuantizedPoint::new(fields[0], fields[1], fields[2]));
    }
    if points.is_empty() {
        return Err(Error::parse(path, 1, "no points"));
    }
    QuantizedPointCloud::from_sequence(points, bins)
}

pub fn load_conditions(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, i + 1, "bad number in condition vector"))?;
        if let Some(first) = out.first() {
            if first.len() != v.len() {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("condition has {} values, expected {}", v.len(), first.len()),
                ));
            }
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::parse(path, 1, "no condition vectors"));
    }
    Ok(out)
}

pub fn save_conditions(conditions: &[Vec<f64>], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for v in conditions {
        let fields: Vec<String> = v.iter().map(f64::to_string).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}
