//! The three-branch autoregressive network.
//!
//! For every point `i` the z-branch predicts `p(z_i | s_<i)`, the y-branch
//! `p(y_i | s_<i, z_i)` and the x-branch `p(x_i | s_<i, z_i, y_i)`. Each
//! branch has its own point encoder, context operator and head:
//!
//! ```text
//! full points  ──encoder──► F ──context op──► C (shifted, row i sees s_<i)
//! masked point ──encoder──► M                    │
//!                         head(C ⊕ M) ──► n×B logits
//! ```
//!
//! The masked path feeds the current point with every coordinate the branch
//! may not see replaced by `0.0`; real coordinates are bin centers, which
//! are strictly positive. All `n` rows of all branches come out of one
//! forward pass.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::{context_on_tape, ContextKind, SacaMlp};
use crate::data::{bin_center, QuantizedPoint, QuantizedPointCloud};
use crate::error::{Error, Result};
use crate::layers::Mlp;
use crate::tensor::{
    adam_step, cross_entropy_from_logits, GradientSet, Matrix, OptimizerState, ParameterSet,
    Tape, Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    Z,
    Y,
    X,
}

impl Branch {
    /// Generation order.
    pub const ALL: [Branch; 3] = [Branch::Z, Branch::Y, Branch::X];

    pub fn index(self) -> usize {
        match self {
            Branch::Z => 0,
            Branch::Y => 1,
            Branch::X => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Z => "z",
            Branch::Y => "y",
            Branch::X => "x",
        }
    }

    /// The coordinate this branch predicts.
    pub fn target(self, p: &QuantizedPoint) -> u32 {
        match self {
            Branch::Z => p.z,
            Branch::Y => p.y,
            Branch::X => p.x,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "z" => Ok(Branch::Z),
            "y" => Ok(Branch::Y),
            "x" => Ok(Branch::X),
            other => Err(Error::Config(format!("unknown branch {other:?} (expected z, y or x)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Quantization bins per axis.
    pub bins: usize,
    /// Width of point features and context rows.
    pub feature_width: usize,
    /// Hidden widths of the encoder between the 3 inputs and `feature_width`.
    pub encoder_hidden: Vec<usize>,
    /// Hidden widths of the head between `2 · feature_width` and `bins`.
    pub head_hidden: Vec<usize>,
    pub context: ContextKind,
    /// Length of the condition vector; 0 for an unconditional model.
    pub condition_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            bins: 200,
            feature_width: 128,
            encoder_hidden: vec![64, 128],
            head_hidden: vec![128],
            context: ContextKind::SacaA,
            condition_dim: 0,
            seed: 0,
        }
    }
}

pub(crate) fn format_widths(w: &[usize]) -> String {
    w.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

pub(crate) fn parse_widths(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&w| w > 0)
                .ok_or_else(|| Error::Config(format!("bad layer width {t:?}")))
        })
        .collect()
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Config(format!("bins must be at least 2, got {}", self.bins)));
        }
        if self.feature_width == 0 {
            return Err(Error::Config("feature_width must be positive".into()));
        }
        if self.encoder_hidden.iter().chain(&self.head_hidden).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Every encoder width from input to output: `[3, …, f]`.
    pub fn encoder_sizes(&self) -> Vec<usize> {
        let mut s = vec![3];
        s.extend(&self.encoder_hidden);
        s.push(self.feature_width);
        s
    }

    /// Every head width from input to output: `[2f, …, B]`.
    pub fn head_sizes(&self) -> Vec<usize> {
        let mut s = vec![2 * self.feature_width];
        s.extend(&self.head_hidden);
        s.push(self.bins);
        s
    }

    /// Length of [`Model::extract_features`] output.
    pub fn feature_vector_len(&self) -> usize {
        3 * 3 * self.encoder_sizes()[1..].iter().sum::<usize>()
    }

    /// `key = value` lines, readable by [`ModelConfig::from_text`].
    pub fn to_text(&self) -> String {
        format!(
            "bins = {}\nfeature_width = {}\nencoder_hidden = {}\nhead_hidden = {}\ncontext = {}\ncondition_dim = {}\nseed = {}\n",
            self.bins,
            self.feature_width,
            format_widths(&self.encoder_hidden),
            format_widths(&self.head_hidden),
            self.context,
            self.condition_dim,
            self.seed
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = ModelConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            c.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Sets one field by its text key. Returns `Ok(false)` for keys that are
    /// not model fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let count = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Config(format!("{key}: bad count {v:?}")))
        };
        match key {
            "bins" => self.bins = count(value)?,
            "feature_width" => self.feature_width = count(value)?,
            "encoder_hidden" => self.encoder_hidden = parse_widths(value)?,
            "head_hidden" => self.head_hidden = parse_widths(value)?,
            "context" => self.context = value.parse()?,
            "condition_dim" => self.condition_dim = count(value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("seed: bad value {value:?}")))?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BranchLayout {
    encoder: Mlp,
    saca: Option<SacaMlp>,
    head: Mlp,
}

/// Network inputs for one cloud: the full points for the context path and,
/// per branch, the masked current point.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchInputs {
    pub context: Matrix,
    /// Indexed by [`Branch::index`].
    pub masked: [Matrix; 3],
}

/// `(x, y, z)` bin centers for the context path; masked rows expose nothing
/// for z, only `z` for y, and `y, z` for x.
pub fn build_branch_inputs(points: &[QuantizedPoint], bins: usize) -> BranchInputs {
    let n = points.len();
    let mut context = Matrix::zeros(n, 3);
    let mut masked_y = Matrix::zeros(n, 3);
    let mut masked_x = Matrix::zeros(n, 3);
    for (r, p) in points.iter().enumerate() {
        let (x, y, z) = (
            bin_center(p.x, bins),
            bin_center(p.y, bins),
            bin_center(p.z, bins),
        );
        context.row_mut(r).copy_from_slice(&[x, y, z]);
        masked_y.row_mut(r).copy_from_slice(&[0.0, 0.0, z]);
        masked_x.row_mut(r).copy_from_slice(&[0.0, y, z]);
    }
    BranchInputs {
        context,
        masked: [Matrix::zeros(n, 3), masked_y, masked_x],
    }
}

/// n×B logits per branch.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchLogits {
    pub z: Matrix,
    pub y: Matrix,
    pub x: Matrix,
}

impl BranchLogits {
    pub fn get(&self, branch: Branch) -> &Matrix {
        match branch {
            Branch::Z => &self.z,
            Branch::Y => &self.y,
            Branch::X => &self.x,
        }
    }
}

/// Negative log-likelihood of one cloud.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nll {
    /// Σ over points and branches of `-ln p`, in nats.
    pub total_nats: f64,
    pub points: usize,
}

impl Nll {
    pub fn coordinates(&self) -> usize {
        3 * self.points
    }

    pub fn nats_per_coordinate(&self) -> f64 {
        self.total_nats / self.coordinates() as f64
    }

    pub fn bits_per_coordinate(&self) -> f64 {
        self.nats_per_coordinate() / std::f64::consts::LN_2
    }

    /// `ln p(S)`.
    pub fn log_likelihood(&self) -> f64 {
        -self.total_nats
    }
}

/// Sums the per-coordinate cross entropies of all three branches.
pub fn nll_loss(logits: &BranchLogits, q: &QuantizedPointCloud) -> Result<Nll> {
    let mut total = 0.0;
    for branch in Branch::ALL {
        let targets: Vec<usize> = q
            .points()
            .iter()
            .map(|p| branch.target(p) as usize)
            .collect();
        let (mean, _) = cross_entropy_from_logits(logits.get(branch), &targets)?;
        total += mean * q.len() as f64;
    }
    Ok(Nll {
        total_nats: total,
        points: q.len(),
    })
}

/// Intermediate values of one branch on a tape.
pub(crate) struct BranchTrace {
    pub features: Var,
    pub context: Var,
    pub logits: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParameterSet,
    branches: Vec<BranchLayout>,
}

fn build_layout(
    config: &ModelConfig,
    params: &mut ParameterSet,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BranchLayout>> {
    let d = config.condition_dim;
    Branch::ALL
        .iter()
        .map(|b| {
            let name = b.as_str();
            let encoder = Mlp::new(
                params,
                &format!("{name}.encoder"),
                &config.encoder_sizes(),
                d,
                true,
                false,
                rng,
            )?;
            let saca = if config.context.is_learned() {
                Some(SacaMlp::new(
                    params,
                    &format!("{name}.saca"),
                    config.feature_width,
                    d,
                    rng,
                )?)
            } else {
                None
            };
            let head = Mlp::new(
                params,
                &format!("{name}.head"),
                &config.head_sizes(),
                d,
                false,
                true,
                rng,
            )?;
            Ok(BranchLayout {
                encoder,
                saca,
                head,
            })
        })
        .collect()
}

impl Model {
    /// Fresh model: Glorot-uniform weights from `config.seed`, zero biases,
    /// zero condition projections and a zero head output layer, so an
    /// untrained model predicts uniform distributions.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParameterSet::new();
        let branches = build_layout(&config, &mut params, &mut rng)?;
        Ok(Model {
            config,
            params,
            branches,
        })
    }

    /// Rebuilds a model around existing parameters; names and shapes must
    /// match the layout `config` describes.
    pub fn from_parameters(config: ModelConfig, params: ParameterSet) -> Result<Self> {
        let fresh = Model::new(config)?;
        if !fresh.params.matches_layout(&params) {
            return Err(Error::Config(
                "parameters do not match the model configuration".into(),
            ));
        }
        Ok(Model {
            params,
            ..fresh
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    /// Parameter names of the head's final layer for each branch.
    pub fn head_output_names(&self) -> Vec<String> {
        Branch::ALL
            .iter()
            .flat_map(|b| {
                let last = self.config.head_sizes().len() - 2;
                [
                    format!("{b}.head.{last}.w"),
                    format!("{b}.head.{last}.b"),
                ]
            })
            .collect()
    }

    fn condition_var(&self, tape: &mut Tape<'_>, h: Option<&[f64]>) -> Result<Option<Var>> {
        match (self.config.condition_dim, h) {
            (0, None) => Ok(None),
            (0, Some(_)) => Err(Error::Config(
                "condition vector given to an unconditional model".into(),
            )),
            (d, None) => Err(Error::Config(format!(
                "model expects a condition vector of length {d}"
            ))),
            (d, Some(h)) if h.len() != d => Err(Error::Config(format!(
                "condition vector has length {}, model expects {d}",
                h.len()
            ))),
            (_, Some(h)) => Ok(Some(tape.constant(Matrix::row_vector(h)))),
        }
    }

    fn check_points(&self, points: &[QuantizedPoint]) -> Result<()> {
        if points.is_empty() {
            return Err(Error::Input("cannot evaluate an empty cloud".into()));
        }
        let b = self.config.bins as u32;
        if points.iter().any(|p| p.x >= b || p.y >= b || p.z >= b) {
            return Err(Error::Input(format!(
                "cloud has bins outside the model's [0, {b})"
            )));
        }
        Ok(())
    }

    fn check_cloud(&self, q: &QuantizedPointCloud) -> Result<()> {
        if q.bins() != self.config.bins {
            return Err(Error::Input(format!(
                "cloud uses {} bins, model uses {}",
                q.bins(),
                self.config.bins
            )));
        }
        Ok(())
    }

    pub(crate) fn trace_branch(
        &self,
        tape: &mut Tape<'_>,
        branch: Branch,
        inputs: &BranchInputs,
        cond: Option<Var>,
    ) -> Result<BranchTrace> {
        let layout = &self.branches[branch.index()];
        let full = tape.constant(inputs.context.clone());
        let encoder_acts = layout.encoder.forward_collect(tape, full, cond)?;
        let features = *encoder_acts.last().expect("encoder has layers");
        let context = context_on_tape(
            tape,
            self.config.context,
            features,
            layout.saca.as_ref(),
            cond,
        )?;
        let masked = tape.constant(inputs.masked[branch.index()].clone());
        let current = layout.encoder.forward(tape, masked, cond)?;
        let joined = tape.concat_cols(context, current)?;
        let logits = layout.head.forward(tape, joined, cond)?;
        Ok(BranchTrace {
            features,
            context,
            logits,
        })
    }

    /// Logits of every branch for a token sequence (any order).
    pub fn forward_points(&self, points: &[QuantizedPoint], h: Option<&[f64]>) -> Result<BranchLogits> {
        self.check_points(points)?;
        let inputs = build_branch_inputs(points, self.config.bins);
        let mut tape = Tape::new(&self.params);
        let cond = self.condition_var(&mut tape, h)?;
        let mut out = Vec::with_capacity(3);
        for branch in Branch::ALL {
            let trace = self.trace_branch(&mut tape, branch, &inputs, cond)?;
            out.push(tape.value(trace.logits).clone());
        }
        let x = out.pop().expect("three branches");
        let y = out.pop().expect("three branches");
        let z = out.pop().expect("three branches");
        Ok(BranchLogits { z, y, x })
    }

    pub fn forward(&self, q: &QuantizedPointCloud, h: Option<&[f64]>) -> Result<BranchLogits> {
        self.check_cloud(q)?;
        self.forward_points(q.points(), h)
    }

    /// Logits of a single branch; one forward pass of that branch.
    pub fn branch_logits(
        &self,
        points: &[QuantizedPoint],
        branch: Branch,
        h: Option<&[f64]>,
    ) -> Result<Matrix> {
        self.check_points(points)?;
        let inputs = build_branch_inputs(points, self.config.bins);
        let mut tape = Tape::new(&self.params);
        let cond = self.condition_var(&mut tape, h)?;
        let trace = self.trace_branch(&mut tape, branch, &inputs, cond)?;
        Ok(tape.value(trace.logits).clone())
    }

    /// Pre-context point features `F` and shifted context `C` of a branch.
    pub fn branch_context(
        &self,
        points: &[QuantizedPoint],
        branch: Branch,
        h: Option<&[f64]>,
    ) -> Result<(Matrix, Matrix)> {
        self.check_points(points)?;
        let inputs = build_branch_inputs(points, self.config.bins);
        let mut tape = Tape::new(&self.params);
        let cond = self.condition_var(&mut tape, h)?;
        let trace = self.trace_branch(&mut tape, branch, &inputs, cond)?;
        Ok((
            tape.value(trace.features).clone(),
            tape.value(trace.context).clone(),
        ))
    }

    pub fn nll(&self, q: &QuantizedPointCloud, h: Option<&[f64]>) -> Result<Nll> {
        nll_loss(&self.forward(q, h)?, q)
    }

    /// Total NLL (nats) and its gradient with respect to every parameter.
    pub fn nll_gradients(
        &self,
        q: &QuantizedPointCloud,
        h: Option<&[f64]>,
    ) -> Result<(Nll, GradientSet)> {
        self.check_cloud(q)?;
        self.check_points(q.points())?;
        let inputs = build_branch_inputs(q.points(), self.config.bins);
        let mut tape = Tape::new(&self.params);
        let cond = self.condition_var(&mut tape, h)?;
        let mut total: Option<Var> = None;
        for branch in Branch::ALL {
            let trace = self.trace_branch(&mut tape, branch, &inputs, cond)?;
            let targets: Vec<usize> = q
                .points()
                .iter()
                .map(|p| branch.target(p) as usize)
                .collect();
            let ce = tape.cross_entropy_sum(trace.logits, &targets)?;
            total = Some(match total {
                Some(t) => tape.add(t, ce)?,
                None => ce,
            });
        }
        let total = total.expect("three branches");
        let nll = Nll {
            total_nats: tape.value(total).get(0, 0),
            points: q.len(),
        };
        Ok((nll, tape.backward(total)?))
    }

    /// Min, max and mean pooling over points of every encoder layer's
    /// activation on the full-point path, before the context operator.
    ///
    /// Layout: for branch z, y, x; for each encoder layer in order; the
    /// layer's min vector, then max, then mean. The cloud is re-sorted first,
    /// so the result does not depend on input order.
    pub fn extract_features(&self, q: &QuantizedPointCloud, h: Option<&[f64]>) -> Result<Vec<f64>> {
        self.check_cloud(q)?;
        let sorted = QuantizedPointCloud::new(q.points().to_vec(), q.bins())?;
        self.check_points(sorted.points())?;
        let inputs = build_branch_inputs(sorted.points(), self.config.bins);
        let mut tape = Tape::new(&self.params);
        let cond = self.condition_var(&mut tape, h)?;
        let mut out = Vec::with_capacity(self.config.feature_vector_len());
        for branch in Branch::ALL {
            let layout = &self.branches[branch.index()];
            let full = tape.constant(inputs.context.clone());
            let acts = layout.encoder.forward_collect(&mut tape, full, cond)?;
            for act in acts {
                let m = tape.value(act);
                let (n, c) = m.shape();
                let col = |k: usize| (0..n).map(move |r| m.get(r, k));
                out.extend((0..c).map(|k| col(k).fold(f64::INFINITY, f64::min)));
                out.extend((0..c).map(|k| col(k).fold(f64::NEG_INFINITY, f64::max)));
                out.extend((0..c).map(|k| col(k).sum::<f64>() / n as f64));
            }
        }
        Ok(out)
    }
}

/// One cloud of a training batch.
#[derive(Clone, Copy, Debug)]
pub struct TrainItem<'a> {
    pub cloud: &'a QuantizedPointCloud,
    pub condition: Option<&'a [f64]>,
}

/// Averages the per-coordinate NLL gradient over the batch and applies one
/// Adam step. Returns the batch-mean loss in nats per coordinate, measured
/// before the update.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut OptimizerState,
    batch: &[TrainItem<'_>],
    lr: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Input("training batch is empty".into()));
    }
    if let Some(item) = batch.iter().find(|i| i.cloud.bins() != model.config.bins) {
        return Err(Error::Input(format!(
            "batch cloud uses {} bins, model uses {}",
            item.cloud.bins(),
            model.config.bins
        )));
    }
    let mut total = GradientSet::zeros_for(&model.params);
    let mut loss = 0.0;
    for item in batch {
        let (nll, mut grads) = model.nll_gradients(item.cloud, item.condition)?;
        grads.scale(1.0 / nll.coordinates() as f64);
        total.add_assign(&grads);
        loss += nll.nats_per_coordinate();
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    adam_step(&mut model.params, &total, optimizer, lr)?;
    Ok(loss * inv)
}
