//! Reverse-mode differentiation over a per-forward recorded computation.
//!
//! Every operation appends a node holding its value and the inputs it was
//! computed from. [`Tape::backward`] walks the nodes in reverse and
//! accumulates adjoints into a [`GradientSet`].

use std::borrow::Cow;
use std::rc::Rc;

use super::matrix::{self, check_targets, log_sum_exp, matmul_nt, matmul_tn, softmax_in_place};
use super::{GradientSet, Matrix, ParamId, ParameterSet};
use crate::error::{Error, Result};

/// A value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Concat(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MeanPrefix(Var),
    /// Source row of every output entry.
    MaxPrefix(Var, Vec<usize>),
    CumSum(Var),
    ShiftDown(Var),
    Gather(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    SliceRows(Var, usize),
    /// Targets and the cached row softmax.
    CrossEntropySum(Var, Vec<usize>, Matrix),
}

struct Node<'p> {
    value: Cow<'p, Matrix>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node<'p>>,
    bound: Vec<Option<Var>>,
}

/// Adjoints of the leaves of a tape after a backward pass.
pub struct Adjoints {
    grads: Vec<Option<Matrix>>,
}

impl Adjoints {
    /// Gradient with respect to a constant or parameter leaf, if the loss
    /// reached it.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            bound: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf bound to a parameter. Repeated calls return the same var.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(self.params.get(id)),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matrix::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matrix::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Broadcast-adds a 1×c row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let out = matrix::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(out, Op::AddRow(x, bias)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = matrix::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matrix::concat_cols(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matrix::elementwise_mul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scaled(s);
        self.push(out, Op::Scale(x, s))
    }

    fn require_rows(&self, x: Var, op: &'static str) -> Result<()> {
        if self.value(x).rows() == 0 {
            return Err(Error::shape(op, "empty matrix"));
        }
        Ok(())
    }

    /// Row i = mean of rows 0..=i, via a running sum.
    pub fn mean_prefix(&mut self, x: Var) -> Result<Var> {
        self.require_rows(x, "mean_pool_prefix")?;
        let input = self.value(x);
        let (n, c) = input.shape();
        let mut out = Matrix::zeros(n, c);
        let mut running = vec![0.0; c];
        for r in 0..n {
            let inv = 1.0 / (r + 1) as f64;
            for ((s, &v), o) in running.iter_mut().zip(input.row(r)).zip(out.row_mut(r)) {
                *s += v;
                *o = *s * inv;
            }
        }
        Ok(self.push(out, Op::MeanPrefix(x)))
    }

    /// Row i = entrywise max of rows 0..=i. Ties keep the earliest row.
    pub fn max_prefix(&mut self, x: Var) -> Result<Var> {
        self.require_rows(x, "max_pool_prefix")?;
        let input = self.value(x);
        let (n, c) = input.shape();
        let mut out = Matrix::zeros(n, c);
        let mut source = vec![0usize; n * c];
        let mut best: Vec<f64> = input.row(0).to_vec();
        let mut arg = vec![0usize; c];
        for r in 0..n {
            for (k, &v) in input.row(r).iter().enumerate() {
                if v > best[k] {
                    best[k] = v;
                    arg[k] = r;
                }
            }
            out.row_mut(r).copy_from_slice(&best);
            source[r * c..(r + 1) * c].copy_from_slice(&arg);
        }
        Ok(self.push(out, Op::MaxPrefix(x, source)))
    }

    /// Row i = sum of rows 0..=i.
    pub fn cumsum_rows(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for r in 1..out.rows() {
            let c = out.cols();
            let (prev, cur) = out.data_mut().split_at_mut(r * c);
            for (o, p) in cur[..c].iter_mut().zip(&prev[(r - 1) * c..]) {
                *o += p;
            }
        }
        self.push(out, Op::CumSum(x))
    }

    /// Moves every row down by one, inserting a zero first row and dropping
    /// the last.
    pub fn shift_down(&mut self, x: Var) -> Var {
        let input = self.value(x);
        let (n, c) = input.shape();
        let mut out = Matrix::zeros(n, c);
        if n > 1 {
            out.data_mut()[c..].copy_from_slice(&input.data()[..(n - 1) * c]);
        }
        self.push(out, Op::ShiftDown(x))
    }

    /// Output row p = input row `index[p]`.
    pub fn gather_rows(&mut self, x: Var, index: Rc<[usize]>) -> Result<Var> {
        let input = self.value(x);
        let c = input.cols();
        if let Some(&bad) = index.iter().find(|&&i| i >= input.rows()) {
            return Err(Error::Index(format!(
                "gather row {bad} of {}",
                input.rows()
            )));
        }
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index.iter() {
            data.extend_from_slice(input.row(i));
        }
        let out = Matrix::from_vec(index.len(), c, data)?;
        Ok(self.push(out, Op::Gather(x, index)))
    }

    /// Output row s = sum of input rows p with `segment[p] == s`.
    pub fn segment_sum(&mut self, x: Var, segment: Rc<[usize]>, segments: usize) -> Result<Var> {
        let input = self.value(x);
        if segment.len() != input.rows() {
            return Err(Error::shape(
                "segment_sum",
                format!("{} segment ids for {} rows", segment.len(), input.rows()),
            ));
        }
        if let Some(&bad) = segment.iter().find(|&&s| s >= segments) {
            return Err(Error::Index(format!("segment {bad} of {segments}")));
        }
        let mut out = Matrix::zeros(segments, input.cols());
        for (p, &s) in segment.iter().enumerate() {
            for (o, &v) in out.row_mut(s).iter_mut().zip(input.row(p)) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::SegmentSum(x, segment)))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let input = self.value(x);
        if start > end || end > input.rows() {
            return Err(Error::Index(format!(
                "row slice {start}..{end} of {}",
                input.rows()
            )));
        }
        let c = input.cols();
        let out = Matrix::from_vec(end - start, c, input.data()[start * c..end * c].to_vec())?;
        Ok(self.push(out, Op::SliceRows(x, start)))
    }

    /// Sum over rows of `-ln softmax(logits)[r, targets[r]]`, as a 1×1 value.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let l = self.value(logits);
        check_targets(l, targets)?;
        let mut probs = l.clone();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            total += log_sum_exp(l.row(r)) - l.get(r, t);
            softmax_in_place(probs.row_mut(r));
        }
        Ok(self.push(
            Matrix::scalar(total),
            Op::CrossEntropySum(logits, targets.to_vec(), probs),
        ))
    }

    /// Reverse pass from a 1×1 `loss`, returning parameter gradients. Parameters
    /// the loss does not reach get exact zeros.
    pub fn backward(&self, loss: Var) -> Result<GradientSet> {
        let adj = self.adjoints(loss)?;
        let mut grads = GradientSet::zeros_for(self.params);
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &adj.grads[i]) {
                grads.accumulate(*id, g);
            }
        }
        Ok(grads)
    }

    /// Reverse pass from a 1×1 `loss`, keeping the adjoint of every leaf.
    pub fn adjoints(&self, loss: Var) -> Result<Adjoints> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::shape("backward", format!("loss has shape {shape:?}")));
        }
        self.adjoints_seeded(loss, Matrix::scalar(1.0))
    }

    /// Reverse pass seeded with an arbitrary upstream gradient for `out`.
    pub fn adjoints_seeded(&self, out: Var, seed: Matrix) -> Result<Adjoints> {
        self.value(out).same_shape(&seed, "backward seed")?;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            let g = match node.op {
                Op::Constant | Op::Param(_) => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(&node.op, &node.value, g, &mut grads);
        }
        Ok(Adjoints { grads })
    }

    fn propagate(&self, op: &Op, out: &Matrix, g: Matrix, grads: &mut [Option<Matrix>]) {
        match *op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let ga = matmul_nt(&g, self.value(b));
                let gb = matmul_tn(self.value(a), &g);
                accumulate(&mut grads[a.0], ga);
                accumulate(&mut grads[b.0], gb);
            }
            Op::Add(a, b) => {
                accumulate(&mut grads[b.0], g.clone());
                accumulate(&mut grads[a.0], g);
            }
            Op::AddRow(x, bias) => {
                let mut gb = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (s, &v) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *s += v;
                    }
                }
                accumulate(&mut grads[bias.0], gb);
                accumulate(&mut grads[x.0], g);
            }
            Op::Relu(x) => {
                let mut g = g;
                for (gv, &o) in g.data_mut().iter_mut().zip(out.data()) {
                    if o <= 0.0 {
                        *gv = 0.0;
                    }
                }
                accumulate(&mut grads[x.0], g);
            }
            Op::Concat(a, b) => {
                let ca = self.value(a).cols();
                let cb = self.value(b).cols();
                let mut ga = Matrix::zeros(g.rows(), ca);
                let mut gb = Matrix::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    let row = g.row(r);
                    ga.row_mut(r).copy_from_slice(&row[..ca]);
                    gb.row_mut(r).copy_from_slice(&row[ca..]);
                }
                accumulate(&mut grads[a.0], ga);
                accumulate(&mut grads[b.0], gb);
            }
            Op::Mul(a, b) => {
                let ga = matrix::elementwise_mul(&g, self.value(b)).expect("shape checked");
                let gb = matrix::elementwise_mul(&g, self.value(a)).expect("shape checked");
                accumulate(&mut grads[a.0], ga);
                accumulate(&mut grads[b.0], gb);
            }
            Op::Scale(x, s) => accumulate(&mut grads[x.0], g.scaled(s)),
            Op::MeanPrefix(x) => {
                let (n, c) = g.shape();
                let mut gx = Matrix::zeros(n, c);
                let mut running = vec![0.0; c];
                for r in (0..n).rev() {
                    let inv = 1.0 / (r + 1) as f64;
                    for ((s, &v), o) in running.iter_mut().zip(g.row(r)).zip(gx.row_mut(r)) {
                        *s += v * inv;
                        *o = *s;
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::MaxPrefix(x, ref source) => {
                let (n, c) = g.shape();
                let mut gx = Matrix::zeros(n, c);
                for r in 0..n {
                    for k in 0..c {
                        let src = source[r * c + k];
                        gx.data_mut()[src * c + k] += g.get(r, k);
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::CumSum(x) => {
                let (n, c) = g.shape();
                let mut gx = g;
                for r in (0..n.saturating_sub(1)).rev() {
                    let (cur, next) = gx.data_mut().split_at_mut((r + 1) * c);
                    for (o, &v) in cur[r * c..].iter_mut().zip(&next[..c]) {
                        *o += v;
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::ShiftDown(x) => {
                let (n, c) = g.shape();
                let mut gx = Matrix::zeros(n, c);
                if n > 1 {
                    gx.data_mut()[..(n - 1) * c].copy_from_slice(&g.data()[c..]);
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::Gather(x, ref index) => {
                let (rows, c) = self.value(x).shape();
                let mut gx = Matrix::zeros(rows, c);
                for (p, &i) in index.iter().enumerate() {
                    for (o, &v) in gx.row_mut(i).iter_mut().zip(g.row(p)) {
                        *o += v;
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::SegmentSum(x, ref segment) => {
                let c = g.cols();
                let mut data = Vec::with_capacity(segment.len() * c);
                for &s in segment.iter() {
                    data.extend_from_slice(g.row(s));
                }
                let gx = Matrix::from_vec(segment.len(), c, data).expect("sized");
                accumulate(&mut grads[x.0], gx);
            }
            Op::SliceRows(x, start) => {
                let (rows, c) = self.value(x).shape();
                let mut gx = Matrix::zeros(rows, c);
                gx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                accumulate(&mut grads[x.0], gx);
            }
            Op::CrossEntropySum(logits, ref targets, ref probs) => {
                let upstream = g.get(0, 0);
                let mut gl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    gl.row_mut(r)[t] -= 1.0;
                }
                for v in gl.data_mut() {
                    *v *= upstream;
                }
                accumulate(&mut grads[logits.0], gl);
            }
        }
    }
}
