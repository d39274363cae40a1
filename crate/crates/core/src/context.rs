//! Causal context aggregation over a point-feature matrix.
//!
//! Every operator maps an n×f feature matrix `F` to an n×f context matrix
//! whose row `i` summarizes rows `0..i` only: the aggregate is computed over
//! rows `0..=i` and then shifted down one row behind a zero row.
//!
//! * `CaMean` / `CaMax`: prefix mean / max pooling.
//! * `SacaA`: `c_i = Σ_{m≤i} f_m ⊗ MLP(mean_{j≤m} f_j ⊕ f_m)`.
//! * `SacaB`: `c_i = Σ_{m≤i} f_m ⊗ MLP(mean_{j≤i} f_j ⊕ f_m)`, so all weights
//!   for position `i` share the pooled feature of position `i`. This costs
//!   n(n+1)/2 MLP rows.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::Dense;
use crate::tensor::{Matrix, ParameterSet, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContextKind {
    CaMean,
    CaMax,
    SacaA,
    SacaB,
}

impl ContextKind {
    pub const ALL: [ContextKind; 4] = [
        ContextKind::CaMean,
        ContextKind::CaMax,
        ContextKind::SacaA,
        ContextKind::SacaB,
    ];

    pub fn is_learned(self) -> bool {
        matches!(self, ContextKind::SacaA | ContextKind::SacaB)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContextKind::CaMean => "ca_mean",
            ContextKind::CaMax => "ca_max",
            ContextKind::SacaA => "saca_a",
            ContextKind::SacaB => "saca_b",
        }
    }
}

impl fmt::Display for ContextKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ContextKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown context kind {s:?} (expected ca_mean, ca_max, saca_a or saca_b)"
                ))
            })
    }
}

/// Attention-weight MLP, `[2f → f → f]`, ReLU after the hidden layer and a
/// linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct SacaMlp {
    pub hidden: Dense,
    pub output: Dense,
}

impl SacaMlp {
    pub fn new<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        width: usize,
        condition_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(SacaMlp {
            hidden: Dense::new(
                params,
                &format!("{name}.0"),
                2 * width,
                width,
                condition_dim,
                false,
                rng,
            )?,
            output: Dense::new(
                params,
                &format!("{name}.1"),
                width,
                width,
                condition_dim,
                false,
                rng,
            )?,
        })
    }

    pub fn width(&self) -> usize {
        self.output.outputs
    }

    fn check(&self, features: &Matrix) -> Result<()> {
        let f = features.cols();
        if self.hidden.inputs != 2 * f || self.output.outputs != f || self.hidden.outputs != self.output.inputs {
            return Err(Error::shape(
                "saca",
                format!(
                    "MLP [{} → {} → {}] for features of width {f}",
                    self.hidden.inputs, self.hidden.outputs, self.output.outputs
                ),
            ));
        }
        Ok(())
    }
}

/// Dispatches to the chosen operator and returns the shifted context.
pub fn context_on_tape(
    tape: &mut Tape<'_>,
    kind: ContextKind,
    features: Var,
    mlp: Option<&SacaMlp>,
    cond: Option<Var>,
) -> Result<Var> {
    let pooled = match kind {
        ContextKind::CaMean => tape.mean_prefix(features)?,
        ContextKind::CaMax => tape.max_prefix(features)?,
        ContextKind::SacaA | ContextKind::SacaB => {
            let mlp = mlp.ok_or_else(|| {
                Error::Config(format!("{kind} needs an attention MLP"))
            })?;
            mlp.check(tape.value(features))?;
            if kind == ContextKind::SacaA {
                saca_a_unshifted(tape, features, mlp, cond)?
            } else {
                saca_b_unshifted(tape, features, mlp, cond)?
            }
        }
    };
    Ok(tape.shift_down(pooled))
}

fn saca_a_unshifted(
    tape: &mut Tape<'_>,
    features: Var,
    mlp: &SacaMlp,
    cond: Option<Var>,
) -> Result<Var> {
    let pooled = tape.mean_prefix(features)?;
    let joined = tape.concat_cols(pooled, features)?;
    let hidden = mlp.hidden.forward(tape, joined, cond, true)?;
    let weights = mlp.output.forward(tape, hidden, cond, false)?;
    let weighted = tape.mul(features, weights)?;
    Ok(tape.cumsum_rows(weighted))
}

fn saca_b_unshifted(
    tape: &mut Tape<'_>,
    features: Var,
    mlp: &SacaMlp,
    cond: Option<Var>,
) -> Result<Var> {
    let (n, f) = tape.value(features).shape();
    if n == 0 {
        return Err(Error::shape("saca_b", "empty matrix"));
    }
    let pairs = n * (n + 1) / 2;
    let mut query = Vec::with_capacity(pairs);
    let mut member = Vec::with_capacity(pairs);
    for i in 0..n {
        for m in 0..=i {
            query.push(i);
            member.push(m);
        }
    }
    let query: Rc<[usize]> = query.into();
    let member: Rc<[usize]> = member.into();

    // The hidden layer is linear in (pooled_i ⊕ f_m), so split its weight
    // into the pooled half and the feature half and evaluate each half once
    // per row instead of once per pair.
    let pooled = tape.mean_prefix(features)?;
    let w = tape.param(mlp.hidden.weight);
    let w_pooled = tape.slice_rows(w, 0, f)?;
    let w_feature = tape.slice_rows(w, f, 2 * f)?;
    let from_pooled = tape.matmul(pooled, w_pooled)?;
    let from_feature = tape.matmul(features, w_feature)?;
    let a = tape.gather_rows(from_pooled, query.clone())?;
    let b = tape.gather_rows(from_feature, member.clone())?;
    let pre = tape.add(a, b)?;
    let bias = mlp.hidden.effective_bias(tape, cond)?;
    let pre = tape.add_bias(pre, bias)?;
    let hidden = tape.relu(pre);
    let weights = mlp.output.forward(tape, hidden, cond, false)?;
    let members = tape.gather_rows(features, member)?;
    let weighted = tape.mul(members, weights)?;
    tape.segment_sum(weighted, query, n)
}

fn eval_on_tape(
    params: &ParameterSet,
    features: &Matrix,
    build: impl FnOnce(&mut Tape<'_>, Var) -> Result<Var>,
) -> Result<Matrix> {
    let mut tape = Tape::new(params);
    let x = tape.constant(features.clone());
    let out = build(&mut tape, x)?;
    Ok(tape.value(out).clone())
}

/// Row i = mean of rows 0..=i.
pub fn mean_pool_prefix(features: &Matrix) -> Result<Matrix> {
    eval_on_tape(&ParameterSet::new(), features, |t, x| t.mean_prefix(x))
}

/// Row i = entrywise max of rows 0..=i.
pub fn max_pool_prefix(features: &Matrix) -> Result<Matrix> {
    eval_on_tape(&ParameterSet::new(), features, |t, x| t.max_prefix(x))
}

/// Zero first row, then rows 0..n-1 of the input.
pub fn shift_context(context: &Matrix) -> Matrix {
    eval_on_tape(&ParameterSet::new(), context, |t, x| Ok(t.shift_down(x)))
        .expect("shift cannot fail")
}

pub fn saca_a(features: &Matrix, mlp: &SacaMlp, params: &ParameterSet) -> Result<Matrix> {
    apply_context(ContextKind::SacaA, features, Some((mlp, params)))
}

pub fn saca_b(features: &Matrix, mlp: &SacaMlp, params: &ParameterSet) -> Result<Matrix> {
    apply_context(ContextKind::SacaB, features, Some((mlp, params)))
}

/// Shifted context for an unconditional operator.
pub fn apply_context(
    kind: ContextKind,
    features: &Matrix,
    mlp: Option<(&SacaMlp, &ParameterSet)>,
) -> Result<Matrix> {
    let empty = ParameterSet::new();
    let (mlp, params) = match mlp {
        Some((m, p)) => (Some(m), p),
        None => (None, &empty),
    };
    eval_on_tape(params, features, |t, x| context_on_tape(t, kind, x, mlp, None))
}
