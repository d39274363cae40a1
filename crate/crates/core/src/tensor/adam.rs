use super::{GradientSet, Matrix, ParameterSet};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments, one pair per parameter, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub(crate) first: Vec<Matrix>,
    pub(crate) second: Vec<Matrix>,
    pub(crate) step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet) -> Self {
        let zeros = |_| {
            params
                .iter()
                .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
                .collect()
        };
        OptimizerState {
            first: zeros(()),
            second: zeros(()),
            step: 0,
        }
    }

    pub fn from_parts(first: Vec<Matrix>, second: Vec<Matrix>, step: u64) -> Self {
        OptimizerState {
            first,
            second,
            step,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.second
    }

    fn check(&self, params: &ParameterSet) -> Result<()> {
        let ok = self.first.len() == params.len()
            && self.second.len() == params.len()
            && params
                .iter()
                .zip(self.first.iter().zip(&self.second))
                .all(|((_, p), (m, v))| p.shape() == m.shape() && p.shape() == v.shape());
        if ok {
            Ok(())
        } else {
            Err(Error::shape("adam_step", "optimizer state does not match parameters"))
        }
    }
}

/// One bias-corrected Adam update (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &GradientSet,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::Input(format!("learning rate must be positive, got {lr}")));
    }
    if !params.matches_layout(grads.as_parameter_set()) {
        return Err(Error::shape("adam_step", "gradients do not match parameters"));
    }
    state.check(params)?;

    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - BETA1.powi(t);
    let correction2 = 1.0 - BETA2.powi(t);
    for id in params.ids().collect::<Vec<_>>() {
        let g = grads.get(id).data();
        let m = state.first[id.index()].data_mut();
        let v = state.second[id.index()].data_mut();
        let p = params.get_mut(id).data_mut();
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
