use crate::error::{Error, Result};

/// Real-valued cloud, `[x, y, z]` per point.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPointCloud {
    points: Vec<[f64; 3]>,
}

impl RawPointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Input("point cloud is empty".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::Input(format!("point {i} has a non-finite coordinate")));
        }
        Ok(RawPointCloud { points })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<[f64; 3]> {
        self.points
    }
}

/// Bin indices of one point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct QuantizedPoint {
    pub x: u32,
    pub y: u32,
    pub z: u32,
}

impl QuantizedPoint {
    pub const fn new(x: u32, y: u32, z: u32) -> Self {
        QuantizedPoint { x, y, z }
    }

    /// Sort key for plane-sweep order.
    pub fn zyx(&self) -> (u32, u32, u32) {
        (self.z, self.y, self.x)
    }

    pub fn xyz(&self) -> [u32; 3] {
        [self.x, self.y, self.z]
    }
}

/// Quantized cloud: the model's token sequence.
///
/// Clouds built through [`QuantizedPointCloud::new`] or [`quantize`] are
/// sorted by `(z, y, x)`. [`QuantizedPointCloud::from_sequence`] keeps the
/// given order, which is how generated clouds are represented.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedPointCloud {
    bins: usize,
    points: Vec<QuantizedPoint>,
}

impl QuantizedPointCloud {
    /// Validates bins and sorts into `(z, y, x)` order.
    pub fn new(mut points: Vec<QuantizedPoint>, bins: usize) -> Result<Self> {
        validate_bins(&points, bins)?;
        sort_zyx(&mut points);
        Ok(QuantizedPointCloud { bins, points })
    }

    /// Validates bins and keeps the sequence order as given.
    pub fn from_sequence(points: Vec<QuantizedPoint>, bins: usize) -> Result<Self> {
        validate_bins(&points, bins)?;
        Ok(QuantizedPointCloud { bins, points })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn points(&self) -> &[QuantizedPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_zyx_sorted(&self) -> bool {
        self.points.windows(2).all(|w| w[0].zyx() <= w[1].zyx())
    }

    pub fn into_points(self) -> Vec<QuantizedPoint> {
        self.points
    }
}

fn validate_bins(points: &[QuantizedPoint], bins: usize) -> Result<()> {
    if bins < 2 {
        return Err(Error::Input(format!("bin count must be at least 2, got {bins}")));
    }
    if let Some((i, p)) = points
        .iter()
        .enumerate()
        .find(|(_, p)| p.xyz().iter().any(|&b| b as usize >= bins))
    {
        return Err(Error::Input(format!(
            "point {i} has bins {:?} outside [0, {})",
            p.xyz(),
            bins
        )));
    }
    Ok(())
}

/// Stable ascending sort on `(z, y, x)`.
pub fn sort_zyx(points: &mut [QuantizedPoint]) {
    points.sort_by_key(QuantizedPoint::zyx);
}

/// Uniformly scales by the largest axis extent and centers every axis in
/// `[0, 1]`. A cloud with zero extent collapses to `(0.5, 0.5, 0.5)`.
pub fn normalize_unit_cube(cloud: &RawPointCloud) -> Result<RawPointCloud> {
    if cloud.is_empty() {
        return Err(Error::Input("point cloud is empty".into()));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in cloud.points() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if extent == 0.0 {
        return RawPointCloud::new(vec![[0.5; 3]; cloud.len()]);
    }
    let offset: [f64; 3] = std::array::from_fn(|a| (1.0 - (hi[a] - lo[a]) / extent) / 2.0);
    let points = cloud
        .points()
        .iter()
        .map(|p| std::array::from_fn(|a| (p[a] - lo[a]) / extent + offset[a]))
        .collect();
    RawPointCloud::new(points)
}

const RANGE_TOLERANCE: f64 = 1e-9;

fn quantize_coordinate(c: f64, bins: usize) -> u32 {
    let c = c.clamp(0.0, 1.0);
    ((c * bins as f64).floor() as usize).min(bins - 1) as u32
}

/// Quantizes every coordinate, keeping the input order.
pub fn quantize_sequence(cloud: &RawPointCloud, bins: usize) -> Result<QuantizedPointCloud> {
    if bins < 2 {
        return Err(Error::Input(format!("bin count must be at least 2, got {bins}")));
    }
    let mut points = Vec::with_capacity(cloud.len());
    for (i, p) in cloud.points().iter().enumerate() {
        if p
            .iter()
            .any(|&c| !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(&c))
        {
            return Err(Error::Input(format!(
                "point {i} ({}, {}, {}) lies outside [0, 1]",
                p[0], p[1], p[2]
            )));
        }
        points.push(QuantizedPoint::new(
            quantize_coordinate(p[0], bins),
            quantize_coordinate(p[1], bins),
            quantize_coordinate(p[2], bins),
        ));
    }
    QuantizedPointCloud::from_sequence(points, bins)
}

/// `bin = min(⌊c·B⌋, B−1)` per coordinate, then sorted `(z, y, x)`.
pub fn quantize(cloud: &RawPointCloud, bins: usize) -> Result<QuantizedPointCloud> {
    let q = quantize_sequence(cloud, bins)?;
    QuantizedPointCloud::new(q.into_points(), bins)
}

/// Center of a bin, `(bin + 0.5) / B`.
pub fn bin_center(bin: u32, bins: usize) -> f64 {
    (bin as f64 + 0.5) / bins as f64
}

/// Maps every bin to its center, preserving order.
pub fn dequantize(q: &QuantizedPointCloud) -> RawPointCloud {
    let b = q.bins();
    RawPointCloud {
        points: q
            .points()
            .iter()
            .map(|p| [bin_center(p.x, b), bin_center(p.y, b), bin_center(p.z, b)])
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(points: &[[f64; 3]]) -> RawPointCloud {
        RawPointCloud::new(points.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_unit_cube(&raw(&[[0.0, 0.0, 0.0], [2.0, 1.0, 1.0]])).unwrap();
        assert_eq!(n.points(), &[[0.0, 0.25, 0.25], [1.0, 0.75, 0.75]]);

        let n = normalize_unit_cube(&raw(&[[3.0, -7.0, 1e6]])).unwrap();
        assert_eq!(n.points(), &[[0.5, 0.5, 0.5]]);

        let cube = raw(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.3, 0.6, 0.2]]);
        let n = normalize_unit_cube(&cube).unwrap();
        for (a, b) in n.points().iter().zip(cube.points()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_and_non_finite_clouds_are_rejected() {
        assert!(RawPointCloud::new(vec![]).is_err());
        assert!(RawPointCloud::new(vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_coordinate(0.5, 200), 100);
        assert_eq!(quantize_coordinate(0.0, 200), 0);
        assert_eq!(quantize_coordinate(1.0, 200), 199);
        assert_eq!(quantize_coordinate(0.9999, 200), 199);
        let q = quantize(&raw(&[[0.5, 0.0, 1.0]]), 200).unwrap();
        assert_eq!(q.points(), &[QuantizedPoint::new(100, 0, 199)]);
    }

    #[test]
    fn quantize_rejects_out_of_range() {
        assert!(quantize(&raw(&[[0.5, 1.1, 0.5]]), 200).is_err());
        assert!(quantize(&raw(&[[-0.01, 0.5, 0.5]]), 200).is_err());
        // within tolerance is clamped
        let q = quantize(&raw(&[[-1e-12, 1.0 + 1e-12, 0.5]]), 10).unwrap();
        assert_eq!(q.points(), &[QuantizedPoint::new(0, 9, 5)]);
        assert!(quantize(&raw(&[[0.5, 0.5, 0.5]]), 1).is_err());
    }

    #[test]
    fn dequantize_examples() {
        let q = QuantizedPointCloud::new(vec![QuantizedPoint::new(0, 100, 0)], 200).unwrap();
        let d = dequantize(&q);
        assert_eq!(d.points()[0][0], 0.0025);
        assert_eq!(d.points()[0][1], 0.5025);
    }

    #[test]
    fn sort_examples() {
        let p = |z, y, x| QuantizedPoint::new(x, y, z);
        let mut pts = vec![p(3, 1, 2), p(1, 9, 9), p(1, 2, 5)];
        sort_zyx(&mut pts);
        assert_eq!(pts, vec![p(1, 2, 5), p(1, 9, 9), p(3, 1, 2)]);
        let sorted = pts.clone();
        sort_zyx(&mut pts);
        assert_eq!(pts, sorted);
        let mut rev: Vec<_> = sorted.iter().rev().copied().collect();
        sort_zyx(&mut rev);
        assert_eq!(rev, sorted);
    }

    #[test]
    fn quantized_cloud_validates_bins() {
        assert!(QuantizedPointCloud::new(vec![QuantizedPoint::new(0, 0, 16)], 16).is_err());
        let seq = vec![QuantizedPoint::new(0, 0, 5), QuantizedPoint::new(0, 0, 1)];
        let q = QuantizedPointCloud::from_sequence(seq.clone(), 16).unwrap();
        assert_eq!(q.points(), &seq[..]);
        assert!(!q.is_zyx_sorted());
        assert!(QuantizedPointCloud::new(seq, 16).unwrap().is_zyx_sorted());
    }

    #[test]
    fn quantize_dequantize_identity_small_bins() {
        for bins in 2..=512usize {
            let pts: Vec<_> = (0..bins as u32)
                .map(|b| QuantizedPoint::new(b, bins as u32 - 1 - b, b))
                .collect();
            let q = QuantizedPointCloud::new(pts, bins).unwrap();
            assert_eq!(quantize(&dequantize(&q), bins).unwrap(), q, "B = {bins}");
        }
    }

    proptest! {
        #[test]
        fn normalize_stays_in_cube_and_scales_uniformly(
            pts in prop::collection::vec(prop::array::uniform3(-100.0f64..100.0), 2..20)
        ) {
            let cloud = raw(&pts);
            let n = normalize_unit_cube(&cloud).unwrap();
            for p in n.points() {
                for &c in p {
                    prop_assert!((-1e-12..=1.0 + 1e-12).contains(&c));
                }
            }
            let dist = |a: &[f64; 3], b: &[f64; 3]| {
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
            };
            let d0 = dist(&pts[0], &pts[1]);
            let n0 = dist(&n.points()[0], &n.points()[1]);
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    let d = dist(&pts[i], &pts[j]);
                    let nd = dist(&n.points()[i], &n.points()[j]);
                    if d0 > 1e-6 && d > 1e-6 {
                        prop_assert!((nd / n0 - d / d0).abs() <= 1e-9 * (d / d0).max(1.0));
                    }
                }
            }
        }

        #[test]
        fn sort_is_idempotent_permutation(
            raw_pts in prop::collection::vec((0u32..8, 0u32..8, 0u32..8), 0..40)
        ) {
            let pts: Vec<_> = raw_pts.iter().map(|&(x, y, z)| QuantizedPoint::new(x, y, z)).collect();
            let mut once = pts.clone();
            sort_zyx(&mut once);
            let mut twice = once.clone();
            sort_zyx(&mut twice);
            prop_assert_eq!(&once, &twice);
            prop_assert!(once.windows(2).all(|w| w[0].zyx() <= w[1].zyx()));
            let mut a = pts.clone();
            a.sort_by_key(|p| (p.x, p.y, p.z));
            let mut b = once.clone();
            b.sort_by_key(|p| (p.x, p.y, p.z));
            prop_assert_eq!(a, b);
        }
    }
}
