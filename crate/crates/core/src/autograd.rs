//! Dynamic reverse-mode tape.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Nodes are
//! appended in execution order, so reverse index order is a valid
//! topological order for the backward sweep.
//!
//! Discrete choices (argmax in `max`, cluster assignments) are constants for
//! backward. Each such choice is logged as a *selection*; a graph built with
//! [`Graph::replaying`] reuses a previous log instead of recomputing, which
//! keeps finite-difference probes on the same piecewise-smooth branch.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{ops, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Bmm(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Softmax(Var),
    L2Normalize(Var, Vec<f64>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Sum(Var, usize),
    Mean(Var, usize),
    Max {
        x: Var,
        axis: usize,
        idx: Vec<usize>,
    },
    SumAll(Var),
    LogSumExp(Var, usize),
    Diagonal(Var),
    GatherRows(Var, Vec<usize>),
    ClampMax(Var, f64),
    ClusterMerge {
        tokens: Var,
        weights: Var,
        assignment: Vec<usize>,
        k: usize,
        mass: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

/// Log of discrete selections made during a forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Selections(Vec<Vec<usize>>);

impl Selections {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    log: Selections,
    replay: Option<(Selections, usize)>,
}

fn dims_after_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that answers every selection from `log` in order.
    pub fn replaying(log: Selections) -> Self {
        Self {
            replay: Some((log, 0)),
            ..Self::default()
        }
    }

    pub fn selections(&self) -> &Selections {
        &self.log
    }

    pub fn into_selections(self) -> Selections {
        self.log
    }

    /// Runs (or replays) a discrete choice.
    pub fn select(&mut self, compute: impl FnOnce() -> Result<Vec<usize>>) -> Result<Vec<usize>> {
        let chosen = match &mut self.replay {
            Some((log, cursor)) => {
                let s = log
                    .0
                    .get(*cursor)
                    .cloned()
                    .ok_or_else(|| Error::Internal("selection replay log exhausted".into()))?;
                *cursor += 1;
                s
            }
            None => compute()?,
        };
        self.log.0.push(chosen.clone());
        Ok(chosen)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = ops::bmm(self.value(a), self.value(b))?;
        Ok(self.push(t, Op::Bmm(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rank() != 2 {
            return Err(Error::InvalidArgument(format!(
                "transpose: expected rank 2, got {:?}",
                self.shape(a)
            )));
        }
        self.permute(a, &[1, 0])
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let t = ops::permute(self.value(a), perm)?;
        Ok(self.push(t, Op::Permute(a, perm.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = ops::sub(self.value(a), self.value(b))?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let t = ops::add_bias(self.value(a), self.value(bias))?;
        Ok(self.push(t, Op::AddBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = ops::scale(self.value(a), c)?;
        Ok(self.push(t, Op::Scale(a, c)))
    }

    /// Multiplies every entry of `a` by the single entry of `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by", self.shape(a), self.shape(s)));
        }
        let c = self.value(s).item();
        let t = ops::scale(self.value(a), c)?;
        Ok(self.push(t, Op::ScaleBy(a, s)))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = ops::exp(self.value(a))?;
        Ok(self.push(t, Op::Exp(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let t = ops::log(self.value(a))?;
        Ok(self.push(t, Op::Log(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = ops::tanh(self.value(a))?;
        Ok(self.push(t, Op::Tanh(a)))
    }

    pub fn softmax(&mut self, a: Var, mask: Option<&Tensor>) -> Result<Var> {
        let t = ops::softmax(self.value(a), mask)?;
        Ok(self.push(t, Op::Softmax(a)))
    }

    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let (t, norms) = ops::l2_normalize(self.value(a))?;
        Ok(self.push(t, Op::L2Normalize(a, norms)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (t, xhat, inv_std) = ops::layer_norm(self.value(x), self.value(gain), self.value(bias))?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = ops::sum_axis(self.value(a), axis)?;
        Ok(self.push(t, Op::Sum(a, axis)))
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = ops::mean_axis(self.value(a), axis)?;
        Ok(self.push(t, Op::Mean(a, axis)))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let t = ops::sum_all(self.value(a))?;
        Ok(self.push(t, Op::SumAll(a)))
    }

    /// Max along `axis`; the argmax is a logged selection.
    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.max_masked(a, axis, None)
    }

    /// Max along `axis` over positions where `valid[outer * extent + j]` holds.
    pub fn max_masked(&mut self, a: Var, axis: usize, valid: Option<&[bool]>) -> Result<Var> {
        let idx = if self.replay.is_some() {
            self.select(|| unreachable!("replay answers without computing"))?
        } else {
            let idx = ops::argmax_axis(self.value(a), axis, valid)?;
            self.log.0.push(idx.clone());
            idx
        };
        let t = ops::take_along(self.value(a), axis, &idx)?;
        Ok(self.push(t, Op::Max { x: a, axis, idx }))
    }

    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = ops::logsumexp_axis(self.value(a), axis)?;
        Ok(self.push(t, Op::LogSumExp(a, axis)))
    }

    pub fn diagonal(&mut self, a: Var) -> Result<Var> {
        let t = ops::diagonal(self.value(a))?;
        Ok(self.push(t, Op::Diagonal(a)))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = ops::gather_rows(self.value(a), idx)?;
        Ok(self.push(t, Op::GatherRows(a, idx.to_vec())))
    }

    /// `min(x, cap)` elementwise; zero gradient where the cap is active.
    pub fn clamp_max(&mut self, a: Var, cap: f64) -> Result<Var> {
        let t = self.value(a).map(|x| x.min(cap));
        Ok(self.push(t, Op::ClampMax(a, cap)))
    }

    /// Saliency-weighted cluster means.
    ///
    /// `tokens` is `[F, M, D]`, `weights` is `[F, M]` and `assignment` maps
    /// each of the `F * M` tokens to a cluster in `0..k`. Output is
    /// `[F, k, D]` with row `c` equal to `sum_m w_m x_m / sum_m w_m` over the
    /// members of cluster `c`.
    pub fn cluster_merge(&mut self, tokens: Var, weights: Var, assignment: &[usize], k: usize) -> Result<Var> {
        let ts = self.value(tokens);
        let ws = self.value(weights);
        if ts.rank() != 3 || ws.shape() != &ts.shape()[..2] {
            return Err(Error::shape("cluster_merge", ts.shape(), ws.shape()));
        }
        let (f, m, d) = (ts.dim(0), ts.dim(1), ts.dim(2));
        if assignment.len() != f * m || assignment.iter().any(|&c| c >= k) {
            return Err(Error::InvalidArgument(format!(
                "cluster_merge: assignment must have {} entries in 0..{k}",
                f * m
            )));
        }
        let mut out = vec![0.0; f * k * d];
        let mut mass = vec![0.0; f * k];
        let mut members = vec![0usize; f * k];
        for fi in 0..f {
            for mi in 0..m {
                let c = assignment[fi * m + mi];
                let w = ws.data()[fi * m + mi];
                mass[fi * k + c] += w;
                members[fi * k + c] += 1;
                let src = &ts.data()[(fi * m + mi) * d..(fi * m + mi + 1) * d];
                let dst = &mut out[(fi * k + c) * d..(fi * k + c + 1) * d];
                for (o, x) in dst.iter_mut().zip(src) {
                    *o += w * x;
                }
            }
        }
        for (slot, (&w, &n)) in mass.iter().zip(&members).enumerate() {
            if n == 0 {
                return Err(Error::Internal(format!(
                    "cluster_merge: empty cluster {} in frame {}",
                    slot % k,
                    slot / k
                )));
            }
            if w <= 0.0 {
                return Err(Error::Internal(format!("cluster_merge: zero mass in cluster {}", slot % k)));
            }
            out[slot * d..(slot + 1) * d].iter_mut().for_each(|o| *o /= w);
        }
        let t = Tensor::new(vec![f, k, d], out)?.checked("cluster_merge")?;
        Ok(self.push(
            t,
            Op::ClusterMerge {
                tokens,
                weights,
                assignment: assignment.to_vec(),
                k,
                mass,
            },
        ))
    }

    /// Back-propagates from a scalar and accumulates into the store's grads.
    pub fn backward(&self, output: Var, store: &mut ParamStore) -> Result<()> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(out.shape().to_vec(), 1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(pid) = node.param {
                store.accumulate(pid, &g)?;
            }
            for (parent, pg) in self.local_grads(node, &g)? {
                match &mut grads[parent.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| self.value(v);
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let da = ops::matmul(g, &ops::transpose(val(*b))?)?;
                let db = ops::matmul(&ops::transpose(val(*a))?, g)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Bmm(a, b) => {
                let da = ops::bmm(g, &ops::permute(val(*b), &[0, 2, 1])?)?;
                let db = ops::bmm(&ops::permute(val(*a), &[0, 2, 1])?, g)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![(*a, ops::permute(g, &inv)?)]
            }
            Op::Reshape(a) => vec![(*a, g.reshape(val(*a).shape().to_vec())?)],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![(*a, ops::mul(g, val(*b))?), (*b, ops::mul(g, val(*a))?)],
            Op::AddBias(a, b) => {
                let c = val(*b).len();
                let mut db = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (d, x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                vec![(*a, g.clone()), (*b, Tensor::new(val(*b).shape().to_vec(), db)?)]
            }
            Op::Scale(a, c) => vec![(*a, g.map(|x| x * c))],
            Op::ScaleBy(a, s) => {
                let c = val(*s).item();
                let ds: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                vec![(*a, g.map(|x| x * c)), (*s, Tensor::new(val(*s).shape().to_vec(), vec![ds])?)]
            }
            Op::Exp(a) => vec![(*a, ops::mul(g, &node.value)?)],
            Op::Log(a) => {
                let data = g.data().iter().zip(val(*a).data()).map(|(d, x)| d / x).collect();
                vec![(*a, Tensor::new(g.shape().to_vec(), data)?)]
            }
            Op::Tanh(a) => {
                let data = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(d, y)| d * (1.0 - y * y))
                    .collect();
                vec![(*a, Tensor::new(g.shape().to_vec(), data)?)]
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let c = *y.shape().last().unwrap();
                let mut dx = vec![0.0; y.len()];
                for ((drow, grow), yrow) in dx.chunks_mut(c).zip(g.data().chunks(c)).zip(y.data().chunks(c)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = yi * (gi - dot);
                    }
                }
                vec![(*a, Tensor::new(y.shape().to_vec(), dx)?)]
            }
            Op::L2Normalize(a, norms) => {
                let y = &node.value;
                let c = *y.shape().last().unwrap();
                let mut dx = vec![0.0; y.len()];
                for (r, ((drow, grow), yrow)) in dx
                    .chunks_mut(c)
                    .zip(g.data().chunks(c))
                    .zip(y.data().chunks(c))
                    .enumerate()
                {
                    let n = norms[r];
                    if n == 0.0 {
                        continue;
                    }
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = (gi - yi * dot) / n;
                    }
                }
                vec![(*a, Tensor::new(y.shape().to_vec(), dx)?)]
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = *xhat.shape().last().unwrap();
                let gamma = val(*gain).data();
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                let mut dx = vec![0.0; xhat.len()];
                for (r, ((drow, grow), hrow)) in dx
                    .chunks_mut(c)
                    .zip(g.data().chunks(c))
                    .zip(xhat.data().chunks(c))
                    .enumerate()
                {
                    let dh: Vec<f64> = grow.iter().zip(gamma).map(|(a, b)| a * b).collect();
                    let sum_dh: f64 = dh.iter().sum();
                    let sum_dh_h: f64 = dh.iter().zip(hrow).map(|(a, b)| a * b).sum();
                    let cf = c as f64;
                    for j in 0..c {
                        dgain[j] += grow[j] * hrow[j];
                        dbias[j] += grow[j];
                        drow[j] = inv_std[r] / cf * (cf * dh[j] - sum_dh - hrow[j] * sum_dh_h);
                    }
                }
                vec![
                    (*x, Tensor::new(xhat.shape().to_vec(), dx)?),
                    (*gain, Tensor::new(vec![c], dgain)?),
                    (*bias, Tensor::new(vec![c], dbias)?),
                ]
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let shape = val(*a).shape();
                let (outer, n, inner) = dims_after_axis(shape, *axis);
                let factor = if matches!(node.op, Op::Mean(..)) { 1.0 / n as f64 } else { 1.0 };
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            dx[(o * n + j) * inner + i] = g.data()[o * inner + i] * factor;
                        }
                    }
                }
                vec![(*a, Tensor::new(shape.to_vec(), dx)?)]
            }
            Op::Max { x, axis, idx } => {
                let shape = val(*x).shape();
                let (outer, n, inner) = dims_after_axis(shape, *axis);
                let mut dx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    for i in 0..inner {
                        let j = idx[o * inner + i];
                        dx[(o * n + j) * inner + i] += g.data()[o * inner + i];
                    }
                }
                vec![(*x, Tensor::new(shape.to_vec(), dx)?)]
            }
            Op::SumAll(a) => vec![(*a, Tensor::full(val(*a).shape().to_vec(), g.item()))],
            Op::LogSumExp(a, axis) => {
                let xs = val(*a);
                let (outer, n, inner) = dims_after_axis(xs.shape(), *axis);
                let mut dx = vec![0.0; xs.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let lse = node.value.data()[o * inner + i];
                        let go = g.data()[o * inner + i];
                        for j in 0..n {
                            let p = (o * n + j) * inner + i;
                            dx[p] = go * (xs.data()[p] - lse).exp();
                        }
                    }
                }
                vec![(*a, Tensor::new(xs.shape().to_vec(), dx)?)]
            }
            Op::Diagonal(a) => {
                let n = val(*a).dim(0);
                let mut dx = Tensor::zeros(vec![n, n]);
                for i in 0..n {
                    dx.data_mut()[i * n + i] = g.data()[i];
                }
                vec![(*a, dx)]
            }
            Op::GatherRows(a, idx) => {
                let shape = val(*a).shape();
                let w: usize = shape[1..].iter().product();
                let mut dx = Tensor::zeros(shape.to_vec());
                for (r, &src) in idx.iter().enumerate() {
                    for k in 0..w {
                        dx.data_mut()[src * w + k] += g.data()[r * w + k];
                    }
                }
                vec![(*a, dx)]
            }
            Op::ClampMax(a, cap) => {
                let data = g
                    .data()
                    .iter()
                    .zip(val(*a).data())
                    .map(|(d, x)| if *x < *cap { *d } else { 0.0 })
                    .collect();
                vec![(*a, Tensor::new(g.shape().to_vec(), data)?)]
            }
            Op::ClusterMerge {
                tokens,
                weights,
                assignment,
                k,
                mass,
            } => {
                let ts = val(*tokens);
                let ws = val(*weights);
                let (f, m, d) = (ts.dim(0), ts.dim(1), ts.dim(2));
                let out = &node.value;
                let mut dt = vec![0.0; ts.len()];
                let mut dw = vec![0.0; ws.len()];
                for fi in 0..f {
                    for mi in 0..m {
                        let c = assignment[fi * m + mi];
                        let slot = fi * k + c;
                        let w = ws.data()[fi * m + mi];
                        let go = &g.data()[slot * d..(slot + 1) * d];
                        let x = &ts.data()[(fi * m + mi) * d..(fi * m + mi + 1) * d];
                        let o = &out.data()[slot * d..(slot + 1) * d];
                        let mut acc = 0.0;
                        for j in 0..d {
                            dt[(fi * m + mi) * d + j] = w / mass[slot] * go[j];
                            acc += (x[j] - o[j]) * go[j];
                        }
                        dw[fi * m + mi] = acc / mass[slot];
                    }
                }
                vec![
                    (*tokens, Tensor::new(ts.shape().to_vec(), dt)?),
                    (*weights, Tensor::new(ws.shape().to_vec(), dw)?),
                ]
            }
        })
    }
}
