use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::io::load_bins;
use super::QuantizedPointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split {other:?}"))),
        }
    }
}

/// Quantized clouds sharing one bin count, with optional per-cloud conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    clouds: Vec<QuantizedPointCloud>,
    conditions: Option<Vec<Vec<f64>>>,
    split: Split,
}

impl Dataset {
    pub fn new(
        clouds: Vec<QuantizedPointCloud>,
        conditions: Option<Vec<Vec<f64>>>,
        split: Split,
    ) -> Result<Self> {
        if let Some(first) = clouds.first() {
            if let Some(i) = clouds.iter().position(|c| c.bins() != first.bins()) {
                return Err(Error::Input(format!(
                    "cloud {i} uses {} bins, cloud 0 uses {}",
                    clouds[i].bins(),
                    first.bins()
                )));
            }
        }
        if let Some(h) = &conditions {
            if h.len() != clouds.len() {
                return Err(Error::Input(format!(
                    "{} condition vectors for {} clouds",
                    h.len(),
                    clouds.len()
                )));
            }
            if let Some(first) = h.first() {
                if h.iter().any(|v| v.len() != first.len()) {
                    return Err(Error::Input("condition vectors differ in length".into()));
                }
            }
        }
        Ok(Dataset {
            clouds,
            conditions,
            split,
        })
    }

    pub fn clouds(&self) -> &[QuantizedPointCloud] {
        &self.clouds
    }

    pub fn conditions(&self) -> Option<&[Vec<f64>]> {
        self.conditions.as_deref()
    }

    pub fn condition(&self, i: usize) -> Option<&[f64]> {
        self.conditions.as_ref().map(|h| h[i].as_slice())
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn bins(&self) -> Option<usize> {
        self.clouds.first().map(QuantizedPointCloud::bins)
    }
}

pub const MANIFEST_HEADER: &str = "file,source,split,points,bins";

/// One row of a dataset manifest. `file` is relative to the manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub file: PathBuf,
    pub source: String,
    pub split: Split,
    pub points: usize,
    pub bins: usize,
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    writeln!(out, "{MANIFEST_HEADER}")?;
    for e in entries {
        writeln!(
            out,
            "{},{},{},{},{}",
            e.file.display(),
            e.source.replace(',', "_"),
            e.split,
            e.points,
            e.bins
        )?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
        _ => {
            return Err(Error::parse(
                path,
                1,
                format!("expected header {MANIFEST_HEADER:?}"),
            ))
        }
    }
    let mut entries = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::parse(path, i + 1, "expected 5 fields"));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(path, i + 1, format!("bad count {s:?}")))
        };
        entries.push(ManifestEntry {
            file: PathBuf::from(f[0]),
            source: f[1].to_string(),
            split: f[2]
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad split {:?}", f[2])))?,
            points: num(f[3])?,
            bins: num(f[4])?,
        });
    }
    Ok(entries)
}

/// Loads every cloud of `split` listed in a manifest. Conditions, when given,
/// are aligned with the manifest rows (all splits).
pub fn load_dataset(
    manifest: &Path,
    split: Split,
    conditions: Option<Vec<Vec<f64>>>,
) -> Result<Dataset> {
    let entries = read_manifest(manifest)?;
    if let Some(h) = &conditions {
        if h.len() != entries.len() {
            return Err(Error::Input(format!(
                "{} condition vectors for {} manifest rows",
                h.len(),
                entries.len()
            )));
        }
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut clouds = Vec::new();
    let mut kept = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        if e.split != split {
            continue;
        }
        let cloud = load_bins(&base.join(&e.file))?;
        if cloud.bins() != e.bins || cloud.len() != e.points {
            return Err(Error::Input(format!(
                "{} does not match its manifest row",
                e.file.display()
            )));
        }
        clouds.push(cloud);
        kept.push(i);
    }
    let conditions = conditions.map(|h| kept.iter().map(|&i| h[i].clone()).collect());
    Dataset::new(clouds, conditions, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{io::save_bins, QuantizedPoint};

    fn cloud(bins: usize) -> QuantizedPointCloud {
        QuantizedPointCloud::new(vec![QuantizedPoint::new(0, 1, 1)], bins).unwrap()
    }

    #[test]
    fn dataset_invariants() {
        assert!(Dataset::new(vec![cloud(4), cloud(8)], None, Split::Train).is_err());
        assert!(Dataset::new(vec![cloud(4)], Some(vec![]), Split::Train).is_err());
        assert!(Dataset::new(
            vec![cloud(4), cloud(4)],
            Some(vec![vec![1.0], vec![1.0, 2.0]]),
            Split::Train
        )
        .is_err());
        let d = Dataset::new(vec![cloud(4)], Some(vec![vec![0.5]]), Split::Test).unwrap();
        assert_eq!(d.bins(), Some(4));
        assert_eq!(d.condition(0), Some(&[0.5][..]));
    }

    #[test]
    fn manifest_roundtrip_and_split_filter() {
        let dir = tempfile::tempdir().unwrap();
        save_bins(&cloud(4), &dir.path().join("a.bins")).unwrap();
        save_bins(&cloud(4), &dir.path().join("b.bins")).unwrap();
        let entries = vec![
            ManifestEntry {
                file: "a.bins".into(),
                source: "a.xyz".into(),
                split: Split::Train,
                points: 1,
                bins: 4,
            },
            ManifestEntry {
                file: "b.bins".into(),
                source: "b.xyz".into(),
                split: Split::Test,
                points: 1,
                bins: 4,
            },
        ];
        let path = dir.path().join("manifest.csv");
        write_manifest(&entries, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), entries);
        let h = vec![vec![1.0], vec![2.0]];
        let test = load_dataset(&path, Split::Test, Some(h)).unwrap();
        assert_eq!(test.len(), 1);
        assert_eq!(test.condition(0), Some(&[2.0][..]));
    }
}
