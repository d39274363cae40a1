use super::RawPointCloud;
use crate::error::{Error, Result};

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Index of the `(z, y, x)`-lexicographic minimum, lowest index on ties.
fn seed_index(points: &[[f64; 3]]) -> usize {
    let key = |p: &[f64; 3]| [p[2], p[1], p[0]];
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        if key(p) < key(&points[best]) {
            best = i;
        }
    }
    best
}

/// Greedy max-min subset selection.
///
/// Starts at the `(z, y, x)` minimum and repeatedly adds the point farthest
/// from everything selected so far; ties go to the lowest original index.
/// Returns the selected cloud in selection order together with the original
/// indices.
pub fn farthest_point_sampling(
    cloud: &RawPointCloud,
    k: usize,
) -> Result<(RawPointCloud, Vec<usize>)> {
    let points = cloud.points();
    if k > points.len() {
        return Err(Error::Input(format!(
            "cannot select {k} points from a cloud of {}",
            points.len()
        )));
    }
    if k == 0 {
        return Err(Error::Input("farthest point sampling needs k >= 1".into()));
    }
    let mut selected = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; points.len()];
    let mut taken = vec![false; points.len()];
    let mut next = seed_index(points);
    for _ in 0..k {
        selected.push(next);
        taken[next] = true;
        let anchor = points[next];
        let mut best: Option<usize> = None;
        for (i, p) in points.iter().enumerate() {
            if taken[i] {
                continue;
            }
            nearest[i] = nearest[i].min(dist2(p, &anchor));
            if best.is_none_or(|b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        match best {
            Some(b) => next = b,
            None => break,
        }
    }
    let picked = selected.iter().map(|&i| points[i]).collect();
    Ok((RawPointCloud::new(picked)?, selected))
}
