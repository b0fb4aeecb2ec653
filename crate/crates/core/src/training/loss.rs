//! Symmetric InfoNCE over similarity matrices with learned temperatures.

use crate::alignment::SimilarityVars;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::Toggles;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{ops, Tensor};

/// Upper bound on the inverse temperature.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

/// A learned temperature stored as `theta = ln(1 / tau)`.
#[derive(Clone, Copy, Debug)]
pub struct Temperature {
    pub theta: ParamId,
}

impl Temperature {
    pub fn new(store: &mut ParamStore, name: &str, tau: f64) -> Self {
        Self {
            theta: store.add_const(name, vec![1], (1.0 / tau).ln(), false),
        }
    }

    /// `min(exp(theta), MAX_LOGIT_SCALE)` as a `[1]` node.
    pub fn scale(&self, g: &mut Graph, store: &ParamStore) -> Result<Var> {
        let t = g.param(store, self.theta);
        let e = g.exp(t)?;
        g.clamp_max(e, MAX_LOGIT_SCALE)
    }

    pub fn scale_value(&self, store: &ParamStore) -> f64 {
        store.value(self.theta).item().exp().min(MAX_LOGIT_SCALE)
    }
}

fn check_square(shape: &[usize]) -> Result<usize> {
    match shape {
        &[a, b] if a == b && a >= 2 => Ok(a),
        _ => Err(Error::InvalidArgument(format!(
            "info_nce needs a square score matrix with B >= 2, got {shape:?}"
        ))),
    }
}

/// Mean of the text-to-video and video-to-text cross entropies of
/// `scale * scores`, with matching pairs on the diagonal.
pub fn info_nce(g: &mut Graph, scores: Var, scale: Var) -> Result<Var> {
    let b = check_square(g.shape(scores))?;
    let logits = g.scale_by(scores, scale)?;
    let rows = g.logsumexp(logits, 1)?;
    let cols = g.logsumexp(logits, 0)?;
    let diag = g.diagonal(logits)?;
    let both = g.add(rows, cols)?;
    let both = g.sum_all(both)?;
    let pos = g.sum_all(diag)?;
    let pos = g.scale(pos, 2.0)?;
    let total = g.sub(both, pos)?;
    g.scale(total, 0.5 / b as f64)
}

/// The text-to-video and video-to-text cross entropies separately.
pub fn info_nce_terms(scores: &Tensor, scale: f64) -> Result<(f64, f64)> {
    let b = check_square(scores.shape())?;
    let logits = ops::scale(scores, scale)?;
    let rows = ops::logsumexp_axis(&logits, 1)?;
    let cols = ops::logsumexp_axis(&logits, 0)?;
    let (mut t2v, mut v2t) = (0.0, 0.0);
    for i in 0..b {
        t2v += rows.data()[i] - logits.at(i, i);
        v2t += cols.data()[i] - logits.at(i, i);
    }
    Ok((t2v / b as f64, v2t / b as f64))
}

/// Value-only [`info_nce`].
pub fn info_nce_value(scores: &Tensor, scale: f64) -> Result<f64> {
    let (t2v, v2t) = info_nce_terms(scores, scale)?;
    Ok(0.5 * (t2v + v2t))
}

/// Sum of the per-component losses of every enabled granularity.
pub fn total_loss(g: &mut Graph, sims: &SimilarityVars, scales: &[Var; 3], toggles: &Toggles) -> Result<Var> {
    if toggles.active().is_empty() {
        return Err(Error::Config("all alignment granularities are disabled".into()));
    }
    let mut total: Option<Var> = None;
    for &(_, gran, s) in &sims.components {
        if !toggles.enabled(gran) {
            continue;
        }
        let l = info_nce(g, s, scales[gran.index()])?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("no enabled similarity components".into()))
}
