//! Multi-layer patch processing.
//!
//! Each block distills a frame's `M` patch tokens into `K` concept tokens:
//! a learned saliency score weights every token, density-peak clustering
//! picks `K` centers, cluster members are merged by saliency-weighted
//! averaging, and the merged tokens then cross-attend back to the block's
//! input tokens. Blocks are chained; frames never interact.
//!
//! All functions work on `[F, M, D]` batches of frames.

mod dpc;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dpc::{cosine_distances, density_peaks, dpc_select, quantile_sorted, DensityPeaks, DpcSelection, CUTOFF_FLOOR};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpcConfig {
    pub keep_ratio: f64,
    pub density_quantile: f64,
}

impl DpcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(Error::Config(format!("keep_ratio must lie in (0, 1], got {}", self.keep_ratio)));
        }
        if !(self.density_quantile > 0.0 && self.density_quantile < 1.0) {
            return Err(Error::Config(format!(
                "density_quantile must lie in (0, 1), got {}",
                self.density_quantile
            )));
        }
        Ok(())
    }

    /// `ceil(keep_ratio * m)`, at least 1.
    pub fn kept(&self, m: usize) -> usize {
        // The epsilon keeps exact products like 0.5 * 16 from rounding up.
        ((self.keep_ratio * m as f64 - 1e-9).ceil() as usize).clamp(1, m)
    }
}

/// Token count after a chain of keep ratios.
pub fn composed_k(m: usize, keep_ratios: &[f64]) -> usize {
    keep_ratios.iter().fold(m, |k, &r| {
        DpcConfig {
            keep_ratio: r,
            density_quantile: 0.5,
        }
        .kept(k)
    })
}

#[derive(Clone, Debug)]
pub struct SaliencyScorer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl SaliencyScorer {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut impl Rng) -> Self {
        let weight = store.add_normal(format!("{prefix}.saliency.w"), vec![dim], 1.0 / (dim as f64).sqrt(), rng);
        let bias = store.add_const(format!("{prefix}.saliency.b"), vec![1], 0.0, false);
        Self { weight, bias }
    }
}

#[derive(Clone, Debug)]
pub struct MppBlock {
    pub scorer: SaliencyScorer,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub norm_gain: ParamId,
    pub norm_bias: ParamId,
    pub dpc: DpcConfig,
    pub heads: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockInit {
    pub dim: usize,
    pub heads: usize,
    /// Std of the output projection; the query/key/value projections use
    /// `1/sqrt(dim)`.
    pub out_std: f64,
}

impl MppBlock {
    pub fn new(store: &mut ParamStore, prefix: &str, init: BlockInit, dpc: DpcConfig, rng: &mut impl Rng) -> Result<Self> {
        let d = init.dim;
        if init.heads == 0 || !d.is_multiple_of(init.heads) {
            return Err(Error::Config(format!("dim {d} is not divisible by {} heads", init.heads)));
        }
        dpc.validate()?;
        let std = 1.0 / (d as f64).sqrt();
        let scorer = SaliencyScorer::new(store, prefix, d, rng);
        let w_q = store.add_normal(format!("{prefix}.attn.w_q"), vec![d, d], std, rng);
        let w_k = store.add_normal(format!("{prefix}.attn.w_k"), vec![d, d], std, rng);
        let w_v = store.add_normal(format!("{prefix}.attn.w_v"), vec![d, d], std, rng);
        let w_o = store.add_normal(format!("{prefix}.attn.w_o"), vec![d, d], init.out_std, rng);
        let norm_gain = store.add_const(format!("{prefix}.norm.gain"), vec![d], 1.0, false);
        let norm_bias = store.add_const(format!("{prefix}.norm.bias"), vec![d], 0.0, false);
        Ok(Self {
            scorer,
            w_q,
            w_k,
            w_v,
            w_o,
            norm_gain,
            norm_bias,
            dpc,
            heads: init.heads,
        })
    }

    /// Runs one compression-refinement cycle on `[F, M, D]` tokens.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, tokens: Var) -> Result<Var> {
        let saliency = compute_saliency(g, store, &self.scorer, tokens)?;
        let m = g.shape(tokens)[1];
        let k = self.dpc.kept(m);
        let (assignment, _) = select_clusters(g, tokens, k, self.dpc.density_quantile)?;
        let compressed = compress(g, tokens, saliency, &assignment, k)?;
        cross_attend(g, store, self, compressed, tokens)
    }
}

fn expect_frames(g: &Graph, v: Var, op: &str) -> Result<(usize, usize, usize)> {
    match *g.shape(v) {
        [f, m, d] => Ok((f, m, d)),
        ref s => Err(Error::InvalidArgument(format!("{op}: expected [F, M, D] tokens, got {s:?}"))),
    }
}

/// Per-frame softmax of `w . x + b` over the tokens. Returns `[F, M]`.
pub fn compute_saliency(g: &mut Graph, store: &ParamStore, scorer: &SaliencyScorer, tokens: Var) -> Result<Var> {
    let (f, m, d) = expect_frames(g, tokens, "compute_saliency")?;
    let flat = g.reshape(tokens, &[f * m, d])?;
    let w = g.param(store, scorer.weight);
    let w = g.reshape(w, &[d, 1])?;
    let b = g.param(store, scorer.bias);
    let scores = g.matmul(flat, w)?;
    let scores = g.add_bias(scores, b)?;
    let scores = g.reshape(scores, &[f, m])?;
    g.softmax(scores, None)
}

/// Density-peak selection for every frame, logged as one graph selection.
/// Returns the flattened `[F * M]` assignment and the per-frame centers.
pub fn select_clusters(g: &mut Graph, tokens: Var, k: usize, q: f64) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
    let (f, m, d) = expect_frames(g, tokens, "select_clusters")?;
    let values = g.value(tokens).clone();
    let flat = g.select(|| {
        let mut out = Vec::with_capacity(f * (k + m));
        for fi in 0..f {
            let frame = Tensor::new(vec![m, d], values.data()[fi * m * d..(fi + 1) * m * d].to_vec())?;
            let sel = dpc_select(&frame, k, q)?;
            out.extend(sel.centers);
            out.extend(sel.assignment);
        }
        Ok(out)
    })?;
    if flat.len() != f * (k + m) {
        return Err(Error::Internal("replayed cluster selection has the wrong size".into()));
    }
    let mut assignment = Vec::with_capacity(f * m);
    let mut centers = Vec::with_capacity(f);
    for chunk in flat.chunks(k + m) {
        centers.push(chunk[..k].to_vec());
        assignment.extend_from_slice(&chunk[k..]);
    }
    Ok((assignment, centers))
}

/// Saliency-weighted mean of each cluster's members: `[F, M, D] -> [F, K, D]`.
pub fn compress(g: &mut Graph, tokens: Var, saliency: Var, assignment: &[usize], k: usize) -> Result<Var> {
    g.cluster_merge(tokens, saliency, assignment, k)
}

/// `layernorm(c + softmax(c W_q (x W_k)^T / sqrt(d_h)) x W_v W_o)` per frame,
/// with queries from the compressed tokens `c` and keys/values from `x`.
pub fn cross_attend(g: &mut Graph, store: &ParamStore, block: &MppBlock, compressed: Var, original: Var) -> Result<Var> {
    let (f, k, d) = expect_frames(g, compressed, "cross_attend")?;
    let (f2, m, d2) = expect_frames(g, original, "cross_attend")?;
    if f != f2 || d != d2 {
        return Err(Error::shape("cross_attend", g.shape(compressed), g.shape(original)));
    }
    let h = block.heads;
    let dh = d / h;

    let c_flat = g.reshape(compressed, &[f * k, d])?;
    let x_flat = g.reshape(original, &[f * m, d])?;
    let (wq, wk, wv, wo) = (
        g.param(store, block.w_q),
        g.param(store, block.w_k),
        g.param(store, block.w_v),
        g.param(store, block.w_o),
    );
    let q = g.matmul(c_flat, wq)?;
    let kk = g.matmul(x_flat, wk)?;
    let v = g.matmul(x_flat, wv)?;

    // [rows, D] -> [F * H, rows, dh]
    let split_heads = |g: &mut Graph, t: Var, rows: usize| -> Result<Var> {
        if h == 1 {
            return g.reshape(t, &[f, rows, d]);
        }
        let t = g.reshape(t, &[f, rows, h, dh])?;
        let t = g.permute(t, &[0, 2, 1, 3])?;
        g.reshape(t, &[f * h, rows, dh])
    };
    let q = split_heads(g, q, k)?;
    let kk = split_heads(g, kk, m)?;
    let v = split_heads(g, v, m)?;
    let kt = g.permute(kk, &[0, 2, 1])?;
    let scores = g.bmm(q, kt)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt())?;
    let attn = g.softmax(scores, None)?;
    let ctx = g.bmm(attn, v)?;
    let ctx = if h == 1 {
        g.reshape(ctx, &[f * k, d])?
    } else {
        let t = g.reshape(ctx, &[f, h, k, dh])?;
        let t = g.permute(t, &[0, 2, 1, 3])?;
        g.reshape(t, &[f * k, d])?
    };
    let update = g.matmul(ctx, wo)?;
    let residual = g.add(c_flat, update)?;
    let gain = g.param(store, block.norm_gain);
    let bias = g.param(store, block.norm_bias);
    let out = g.layer_norm(residual, gain, bias)?;
    g.reshape(out, &[f, k, d])
}

#[derive(Clone, Debug)]
pub struct MppStack {
    pub blocks: Vec<MppBlock>,
}

impl MppStack {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        init: BlockInit,
        keep_ratios: &[f64],
        density_quantile: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if keep_ratios.is_empty() {
            return Err(Error::Config("an MPP stack needs at least one block".into()));
        }
        let blocks = keep_ratios
            .iter()
            .enumerate()
            .map(|(i, &keep_ratio)| {
                MppBlock::new(
                    store,
                    &format!("{prefix}.block{i}"),
                    init,
                    DpcConfig {
                        keep_ratio,
                        density_quantile,
                    },
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn output_tokens(&self, m: usize) -> usize {
        self.blocks.iter().fold(m, |k, b| b.dpc.kept(k))
    }

    /// `[F, M, D] -> [F, K_final, D]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, patches: Var) -> Result<Var> {
        self.blocks.iter().try_fold(patches, |x, b| b.forward(g, store, x))
    }
}

/// Refines one layer's `[N, M, D]` patch features into `[N, K, D]` concepts.
pub fn mpp_forward(g: &mut Graph, store: &ParamStore, patches: Var, stack: &MppStack) -> Result<Var> {
    stack.forward(g, store, patches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn block(d: usize, keep: f64) -> (ParamStore, MppBlock) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = MppBlock::new(
            &mut store,
            "b",
            BlockInit {
                dim: d,
                heads: 1,
                out_std: 0.5,
            },
            DpcConfig {
                keep_ratio: keep,
                density_quantile: 0.1,
            },
            &mut rng,
        )
        .unwrap();
        (store, b)
    }

    #[test]
    fn composed_ratio_arithmetic() {
        assert_eq!(composed_k(16, &[0.5, 0.5]), 4);
        assert_eq!(composed_k(6, &[0.5, 0.5]), 2);
        assert_eq!(composed_k(5, &[0.5]), 3);
        assert_eq!(composed_k(1, &[0.1, 0.1]), 1);
    }

    #[test]
    fn identical_tokens_get_uniform_saliency() {
        let (store, b) = block(3, 1.0);
        let mut g = Graph::new();
        let t = g.constant(Tensor::new(vec![1, 4, 3], [0.3, -0.2, 0.9].repeat(4)).unwrap());
        let s = compute_saliency(&mut g, &store, &b.scorer, t).unwrap();
        for &w in g.value(s).data() {
            assert!((w - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn saliency_ln2_gap_gives_one_third_two_thirds() {
        let mut store = ParamStore::new();
        let scorer = SaliencyScorer {
            weight: store.add(crate::params::Parameter::new("w", Tensor::from_vec(vec![1.0, 0.0]), true)),
            bias: store.add_const("b", vec![1], 0.0, false),
        };
        let mut g = Graph::new();
        let t = g.constant(Tensor::new(vec![1, 2, 2], vec![0.0, 5.0, 2f64.ln(), -3.0]).unwrap());
        let s = compute_saliency(&mut g, &store, &scorer, t).unwrap();
        let w = g.value(s).data();
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15 && (w[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn two_token_cluster_is_weighted_mean() {
        let mut g = Graph::new();
        let t = g.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 5.0, -2.0]).unwrap());
        let s = g.constant(Tensor::new(vec![1, 2], vec![0.75, 0.25]).unwrap());
        let c = compress(&mut g, t, s, &[0, 0], 1).unwrap();
        assert_eq!(g.value(c).data(), &[0.75 * 1.0 + 0.25 * 5.0, 0.75 * 2.0 - 0.25 * 2.0]);
    }

    #[test]
    fn zero_output_projection_reduces_to_layernorm() {
        let (mut store, b) = block(4, 0.5);
        store.get_mut(b.w_o).value = Tensor::zeros(vec![4, 4]);
        let mut g = Graph::new();
        let c = g.constant(Tensor::new(vec![1, 2, 4], vec![0.1, 0.5, -0.3, 2.0, 1.0, 1.5, 0.0, -1.0]).unwrap());
        let x = g.constant(Tensor::new(vec![1, 3, 4], (0..12).map(|i| (i as f64).sin()).collect()).unwrap());
        let out = cross_attend(&mut g, &store, &b, c, x).unwrap();
        let flat = g.reshape(c, &[2, 4]).unwrap();
        let gain = g.param(&store, b.norm_gain);
        let bias = g.param(&store, b.norm_bias);
        let ln = g.layer_norm(flat, gain, bias).unwrap();
        assert!(g.value(out).data().iter().zip(g.value(ln).data()).all(|(a, b)| a == b));
    }

    #[test]
    fn multi_head_attention_runs() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = MppBlock::new(
            &mut store,
            "b",
            BlockInit {
                dim: 4,
                heads: 2,
                out_std: 0.1,
            },
            DpcConfig {
                keep_ratio: 0.5,
                density_quantile: 0.1,
            },
            &mut rng,
        )
        .unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 4, 4], (0..32).map(|i| (i as f64 * 0.7).cos()).collect()).unwrap());
        let out = b.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(out), &[2, 2, 4]);
    }

    #[test]
    fn heads_must_divide_dim() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init = BlockInit {
            dim: 6,
            heads: 4,
            out_std: 0.1,
        };
        let dpc = DpcConfig {
            keep_ratio: 0.5,
            density_quantile: 0.1,
        };
        assert!(MppBlock::new(&mut store, "b", init, dpc, &mut rng).is_err());
    }
}
