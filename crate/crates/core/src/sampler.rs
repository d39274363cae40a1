//! Point-by-point generation, shape completion and condition arithmetic.
//!
//! Generation draws `z_i`, then `y_i`, then `x_i` for each point in turn.
//! Each draw runs one branch forward on the points so far plus the partial
//! current point, then consumes one uniform variate through the inverse CDF.
//!
//! Randomness comes from ChaCha8 seeded with the settings' `seed`. Sample
//! `k` of a batch uses stream `k`, so batch members are independent of how
//! they are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{QuantizedPoint, QuantizedPointCloud};
use crate::error::{Error, Result};
use crate::model::{Branch, Model};
use crate::tensor::softmax_rows;
use crate::tensor::Matrix;

/// Tolerance on `Σ p = 1` accepted by [`sample_bin`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerSettings {
    pub points: usize,
    pub seed: u64,
    pub temperature: f64,
    pub condition: Option<Vec<f64>>,
    /// Fixed beginning of the sequence; must be `(z, y, x)` sorted.
    pub prefix: Option<QuantizedPointCloud>,
}

impl SamplerSettings {
    pub fn new(points: usize, seed: u64) -> Self {
        SamplerSettings {
            points,
            seed,
            temperature: 1.0,
            condition: None,
            prefix: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::Input("point count must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Input(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if let Some(prefix) = &self.prefix {
            if !prefix.is_zyx_sorted() {
                return Err(Error::Input("prefix is not sorted by (z, y, x)".into()));
            }
            if prefix.len() > self.points {
                return Err(Error::Input(format!(
                    "prefix has {} points but only {} were requested",
                    prefix.len(),
                    self.points
                )));
            }
        }
        Ok(())
    }
}

/// Work done by one generation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GenerationStats {
    pub forward_passes: usize,
    pub variates: usize,
}

/// Inverse-CDF draw from a categorical distribution using one uniform
/// variate.
pub fn sample_bin<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> Result<usize> {
    if probabilities.is_empty() {
        return Err(Error::Input("empty probability vector".into()));
    }
    if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Input("probabilities must be finite and nonnegative".into()));
    }
    let total: f64 = probabilities.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Input(format!("probabilities sum to {total}, not 1")));
    }
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (k, &p) in probabilities.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return Ok(k);
        }
    }
    // Rounding left `u` above the final partial sum.
    Ok(probabilities
        .iter()
        .rposition(|&p| p > 0.0)
        .expect("some probability is positive"))
}

/// Softmax of `logits / temperature`.
pub fn tempered_probabilities(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    softmax_rows(&Matrix::row_vector(&scaled)).into_vec()
}

fn set_coordinate(p: &mut QuantizedPoint, branch: Branch, bin: u32) {
    match branch {
        Branch::Z => p.z = bin,
        Branch::Y => p.y = bin,
        Branch::X => p.x = bin,
    }
}

fn run(
    model: &Model,
    settings: &SamplerSettings,
    rng: &mut ChaCha8Rng,
) -> Result<(QuantizedPointCloud, GenerationStats)> {
    settings.validate()?;
    let bins = model.config().bins;
    let mut points = Vec::with_capacity(settings.points);
    if let Some(prefix) = &settings.prefix {
        if prefix.bins() != bins {
            return Err(Error::Input(format!(
                "prefix uses {} bins, model uses {bins}",
                prefix.bins()
            )));
        }
        points.extend_from_slice(prefix.points());
    }
    let h = settings.condition.as_deref();
    let mut stats = GenerationStats::default();
    while points.len() < settings.points {
        // Coordinates not yet drawn hold 0; the branch being sampled cannot
        // see them.
        points.push(QuantizedPoint::new(0, 0, 0));
        let i = points.len() - 1;
        for branch in Branch::ALL {
            let logits = model.branch_logits(&points, branch, h)?;
            stats.forward_passes += 1;
            let probs = tempered_probabilities(logits.row(i), settings.temperature);
            let bin = sample_bin(&probs, rng)?;
            stats.variates += 1;
            set_coordinate(&mut points[i], branch, bin as u32);
        }
    }
    Ok((QuantizedPointCloud::from_sequence(points, bins)?, stats))
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generates `settings.points` points in generation order (not re-sorted).
/// A prefix in the settings is kept as the first rows.
pub fn generate(model: &Model, settings: &SamplerSettings) -> Result<QuantizedPointCloud> {
    generate_with_stats(model, settings).map(|(q, _)| q)
}

pub fn generate_with_stats(
    model: &Model,
    settings: &SamplerSettings,
) -> Result<(QuantizedPointCloud, GenerationStats)> {
    run(model, settings, &mut rng_for(settings.seed, 0))
}

/// Like [`generate`], but a prefix is required. Its points are returned
/// unchanged as the first rows.
pub fn complete(model: &Model, settings: &SamplerSettings) -> Result<QuantizedPointCloud> {
    if settings.prefix.is_none() {
        return Err(Error::Input("completion needs a prefix".into()));
    }
    generate(model, settings)
}

/// `count` clouds from one seed; cloud `k` uses RNG stream `k`, and cloud 0
/// equals [`generate`] with the same settings.
pub fn generate_batch(
    model: &Model,
    settings: &SamplerSettings,
    count: usize,
) -> Result<Vec<QuantizedPointCloud>> {
    (0..count as u64)
        .map(|k| run(model, settings, &mut rng_for(settings.seed, k)).map(|(q, _)| q))
        .collect()
}

/// `(1 − t)·a + t·b`.
pub fn condition_lerp(a: &[f64], b: &[f64], t: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "condition_lerp",
            detail: format!("lengths {} and {}", a.len(), b.len()),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Input(format!("interpolation weight {t} outside [0, 1]")));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (1.0 - t) * x + t * y).collect())
}

/// `Σ wₖ·vₖ`.
pub fn condition_combine(terms: &[(f64, &[f64])]) -> Result<Vec<f64>> {
    let (_, first) = terms
        .first()
        .ok_or_else(|| Error::Input("no condition vectors to combine".into()))?;
    let mut out = vec![0.0; first.len()];
    for (w, v) in terms {
        if v.len() != out.len() {
            return Err(Error::Shape {
                op: "condition_combine",
                detail: format!("lengths {} and {}", out.len(), v.len()),
            });
        }
        for (o, x) in out.iter_mut().zip(*v) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// One-hot class vector of length `classes`.
pub fn one_hot(class: usize, classes: usize) -> Result<Vec<f64>> {
    if class >= classes {
        return Err(Error::Input(format!(
            "class {class} out of range for {classes} classes"
        )));
    }
    let mut v = vec![0.0; classes];
    v[class] = 1.0;
    Ok(v)
}
