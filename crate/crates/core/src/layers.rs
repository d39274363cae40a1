//! Fully-connected layers with optional additive condition bias.
//!
//! A layer computes `act(x·W + b + h·H)` where `h` is the condition vector
//! (1×d) and `H` maps it to the layer's output width. Unconditional models
//! have no `H`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, ParamId, ParameterSet, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub condition: Option<ParamId>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    /// Glorot-uniform weight (or zeros when `zero_init`), zero bias, zero `H`.
    pub fn new<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        condition_dim: usize,
        zero_init: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = if zero_init {
            params.insert(format!("{name}.w"), Matrix::zeros(inputs, outputs))?
        } else {
            params.insert_glorot(format!("{name}.w"), inputs, outputs, rng)?
        };
        let bias = params.insert(format!("{name}.b"), Matrix::zeros(1, outputs))?;
        let condition = if condition_dim > 0 {
            Some(params.insert(format!("{name}.h"), Matrix::zeros(condition_dim, outputs))?)
        } else {
            None
        };
        Ok(Dense {
            weight,
            bias,
            condition,
            inputs,
            outputs,
        })
    }

    /// `b + h·H`, or just `b` without a condition.
    pub(crate) fn effective_bias(&self, tape: &mut Tape<'_>, cond: Option<Var>) -> Result<Var> {
        let b = tape.param(self.bias);
        match (self.condition, cond) {
            (Some(h_proj), Some(h)) => {
                let hp = tape.param(h_proj);
                let shift = tape.matmul(h, hp)?;
                tape.add(b, shift)
            }
            (None, None) => Ok(b),
            (Some(_), None) => Err(Error::Config(
                "conditional layer evaluated without a condition vector".into(),
            )),
            (None, Some(_)) => Err(Error::Config(
                "condition vector given to an unconditional layer".into(),
            )),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        cond: Option<Var>,
        activate: bool,
    ) -> Result<Var> {
        let w = tape.param(self.weight);
        let pre = tape.matmul(x, w)?;
        let bias = self.effective_bias(tape, cond)?;
        let out = tape.add_bias(pre, bias)?;
        Ok(if activate { tape.relu(out) } else { out })
    }
}

/// A stack of [`Dense`] layers with ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    /// Whether the last layer is followed by ReLU too.
    pub activate_last: bool,
}

impl Mlp {
    /// `sizes` lists every width including input and output.
    pub fn new<R: Rng>(
        params: &mut ParameterSet,
        name: &str,
        sizes: &[usize],
        condition_dim: usize,
        activate_last: bool,
        zero_last: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config(format!("{name}: need at least one layer")));
        }
        let count = sizes.len() - 1;
        let layers = (0..count)
            .map(|i| {
                Dense::new(
                    params,
                    &format!("{name}.{i}"),
                    sizes[i],
                    sizes[i + 1],
                    condition_dim,
                    zero_last && i + 1 == count,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Mlp {
            layers,
            activate_last,
        })
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, cond: Option<Var>) -> Result<Var> {
        Ok(*self.forward_collect(tape, x, cond)?.last().expect("nonempty"))
    }

    /// Output of every layer, post-activation.
    pub fn forward_collect(
        &self,
        tape: &mut Tape<'_>,
        x: Var,
        cond: Option<Var>,
    ) -> Result<Vec<Var>> {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let last = i + 1 == self.layers.len();
            h = layer.forward(tape, h, cond, !last || self.activate_last)?;
            acts.push(h);
        }
        Ok(acts)
    }
}
