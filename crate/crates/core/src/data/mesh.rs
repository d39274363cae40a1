use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RawPointCloud;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some((t, tri)) = triangles
            .iter()
            .enumerate()
            .find(|(_, tri)| tri.iter().any(|&v| v >= vertices.len()))
        {
            return Err(Error::Input(format!(
                "triangle {t} references vertex {:?} but the mesh has {} vertices",
                tri,
                vertices.len()
            )));
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
        })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    fn corners(&self, t: usize) -> [[f64; 3]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        let n = cross(sub(b, a), sub(c, a));
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    /// Indices of zero-area triangles. They are kept but never sampled.
    pub fn degenerate_triangles(&self) -> Vec<usize> {
        (0..self.triangles.len())
            .filter(|&t| self.triangle_area(t) == 0.0)
            .collect()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }
}

/// Samples `m` points uniformly over the surface: triangles are picked with
/// probability proportional to area, then a uniform barycentric point inside.
pub fn sample_mesh_surface(mesh: &TriangleMesh, m: usize, seed: u64) -> Result<RawPointCloud> {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Input("mesh has zero surface area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(m);
    for _ in 0..m {
        let target = rng.gen::<f64>() * total;
        let t = cumulative
            .partition_point(|&c| c <= target)
            .min(cumulative.len() - 1);
        let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let [a, b, c] = mesh.corners(t);
        points.push(std::array::from_fn(|k| {
            a[k] + u * (b[k] - a[k]) + v * (c[k] - a[k])
        }));
    }
    RawPointCloud::new(points)
}

fn parse_f64(tok: Option<&str>, path: &Path, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| Error::parse(path, line, "missing coordinate"))?;
    tok.parse()
        .map_err(|_| Error::parse(path, line, format!("bad number {tok:?}")))
}

/// Wavefront OBJ: `v x y z` and `f a b c` lines; polygons are fan
/// triangulated, texture/normal indices after `/` are ignored.
pub fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), path, lineno)?;
                let y = parse_f64(toks.next(), path, lineno)?;
                let z = parse_f64(toks.next(), path, lineno)?;
                vertices.push([x, y, z]);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in toks {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| {
                        Error::parse(path, lineno, format!("bad face index {tok:?}"))
                    })?;
                    let resolved = if i > 0 {
                        i - 1
                    } else {
                        vertices.len() as i64 + i
                    };
                    if resolved < 0 {
                        return Err(Error::parse(path, lineno, format!("bad face index {tok:?}")));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(Error::parse(path, lineno, "face with fewer than 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Object File Format: `OFF`, counts line, vertices, then `k i0 … ik-1` faces.
pub fn load_off(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (first_no, first) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty OFF file"))?;
    let counts_line = if first == "OFF" {
        lines
            .next()
            .ok_or_else(|| Error::parse(path, first_no, "missing counts line"))?
    } else if let Some(rest) = first.strip_prefix("OFF") {
        (first_no, rest.trim())
    } else {
        return Err(Error::parse(path, first_no, "missing OFF header"));
    };
    let counts: Vec<usize> = counts_line
        .1
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(path, counts_line.0, "bad counts line"))?;
    if counts.len() < 2 {
        return Err(Error::parse(path, counts_line.0, "bad counts line"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (no, l) = lines
            .next()
            .ok_or_else(|| Error::parse(path, counts_line.0, "fewer vertices than declared"))?;
        let mut toks = l.split_whitespace();
        vertices.push([
            parse_f64(toks.next(), path, no)?,
            parse_f64(toks.next(), path, no)?,
            parse_f64(toks.next(), path, no)?,
        ]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (no, l) = lines
            .next()
            .ok_or_else(|| Error::parse(path, counts_line.0, "fewer faces than declared"))?;
        let idx: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, no, "bad face line"))?;
        let k = *idx
            .first()
            .ok_or_else(|| Error::parse(path, no, "empty face line"))?;
        if k < 3 || idx.len() < k + 1 {
            return Err(Error::parse(path, no, "face with fewer than 3 vertices"));
        }
        for j in 1..k - 1 {
            faces.push([idx[1], idx[1 + j], idx[2 + j]]);
        }
    }
    TriangleMesh::new(vertices, faces)
}
