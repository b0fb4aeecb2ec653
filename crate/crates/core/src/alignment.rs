//! Sentence-frame, sentence-patch and word-patch similarities.
//!
//! All three are built on cosine similarity between raw features (features
//! are normalized here, not at ingest), so every score lies in `[-1, 1]`:
//!
//! - SF: mean over frames of `cos(T_s, F[n])`.
//! - SP: mean over frames of the best-matching concept, `max_k cos(T_s, P[n, k])`.
//! - WP: the average of a word-to-patch and a patch-to-word term. Each word
//!   takes its best-matching concept over all `N * K` concepts of the video;
//!   these maxima are combined with weights from a small MLP, softmax
//!   normalized over the valid words. The patch-to-word term is the mirror
//!   image with its own MLP over concepts.
//!
//! Batched forms take `Bt` texts and `Bv` videos and return `[Bt, Bv]`
//! matrices where entry `(i, j)` depends only on text `i` and video `j`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{ops, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Granularity {
    #[serde(rename = "SF")]
    SentenceFrame,
    #[serde(rename = "SP")]
    SentencePatch,
    #[serde(rename = "WP")]
    WordPatch,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Self::SentenceFrame, Self::SentencePatch, Self::WordPatch];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SentenceFrame => "SF",
            Self::SentencePatch => "SP",
            Self::WordPatch => "WP",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn sim(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu * nv)
    }
}

/// Token-weight predictor: `tanh(x W1 + b1) W2 + b2`, one logit per token.
#[derive(Clone, Debug)]
pub struct WeightMlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl WeightMlp {
    pub fn hidden_width(dim: usize) -> usize {
        (dim / 4).max(4)
    }

    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w1: store.add_normal(format!("{prefix}.w1"), vec![dim, hidden], 1.0 / (dim as f64).sqrt(), rng),
            b1: store.add_const(format!("{prefix}.b1"), vec![hidden], 0.0, false),
            w2: store.add_normal(format!("{prefix}.w2"), vec![hidden, 1], 1.0 / (hidden as f64).sqrt(), rng),
            b2: store.add_const(format!("{prefix}.b2"), vec![1], 0.0, false),
        }
    }

    /// `[R, D] -> [R, 1]` logits.
    pub fn logits(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (
            g.param(store, self.w1),
            g.param(store, self.b1),
            g.param(store, self.w2),
            g.param(store, self.b2),
        );
        let h = g.matmul(x, w1)?;
        let h = g.add_bias(h, b1)?;
        let h = g.tanh(h)?;
        let o = g.matmul(h, w2)?;
        g.add_bias(o, b2)
    }
}

/// Normalized text-side features for a batch of captions.
#[derive(Clone, Debug)]
pub struct TextSide {
    /// `[Bt, D]`, unit rows.
    pub sentences: Var,
    /// `[Bt * Lw, D]`, unit rows (padding rows zero).
    pub words: Var,
    /// `[Bt, Lw]`, softmax over valid words; exactly 0 on padding.
    pub word_weights: Var,
    /// `Bt * Lw` validity flags.
    pub valid: Vec<bool>,
    pub batch: usize,
    pub max_words: usize,
}

/// Normalized video-side features for one layer of a batch of videos.
#[derive(Clone, Debug)]
pub struct VideoSide {
    /// `[Bv * N, D]`, unit rows.
    pub frames: Var,
    /// `[Bv * N * K, D]`, unit rows.
    pub concepts: Var,
    /// `[Bv, N * K]`, softmax over each video's concepts.
    pub concept_weights: Var,
    pub batch: usize,
    pub frames_per_video: usize,
    pub concepts_per_frame: usize,
}

/// `sentences`: `[Bt, D]`; `words`: `[Bt, Lw, D]`; `counts[i]` valid words of text `i`.
pub fn encode_text(
    g: &mut Graph,
    store: &ParamStore,
    mlp: &WeightMlp,
    sentences: Var,
    words: Var,
    counts: &[usize],
) -> Result<TextSide> {
    let &[bt, lw, d] = g.shape(words) else {
        return Err(Error::InvalidArgument(format!("encode_text: words must be [Bt, Lw, D], got {:?}", g.shape(words))));
    };
    if g.shape(sentences) != [bt, d] {
        return Err(Error::shape("encode_text", g.shape(sentences), g.shape(words)));
    }
    if counts.len() != bt {
        return Err(Error::InvalidArgument(format!("encode_text: {} word counts for {bt} texts", counts.len())));
    }
    if let Some(&bad) = counts.iter().find(|&&c| c == 0 || c > lw) {
        return Err(Error::InvalidArgument(format!("word count {bad} outside 1..={lw}")));
    }
    let valid: Vec<bool> = counts.iter().flat_map(|&c| (0..lw).map(move |w| w < c)).collect();
    let mask = Tensor::new(
        vec![bt, lw],
        valid.iter().map(|&ok| if ok { 0.0 } else { f64::NEG_INFINITY }).collect(),
    )?;

    let words_flat = g.reshape(words, &[bt * lw, d])?;
    let logits = mlp.logits(g, store, words_flat)?;
    let logits = g.reshape(logits, &[bt, lw])?;
    let word_weights = g.softmax(logits, Some(&mask))?;
    Ok(TextSide {
        sentences: g.l2_normalize(sentences)?,
        words: g.l2_normalize(words_flat)?,
        word_weights,
        valid,
        batch: bt,
        max_words: lw,
    })
}

/// `frames`: `[Bv * N, D]`; `concepts`: `[Bv * N, K, D]`.
pub fn encode_video(g: &mut Graph, store: &ParamStore, mlp: &WeightMlp, frames: Var, concepts: Var, batch: usize) -> Result<VideoSide> {
    let &[fk, k, d] = g.shape(concepts) else {
        return Err(Error::InvalidArgument(format!("encode_video: concepts must be [F, K, D], got {:?}", g.shape(concepts))));
    };
    if batch == 0 || fk % batch != 0 || g.shape(frames) != [fk, d] {
        return Err(Error::shape("encode_video", g.shape(frames), g.shape(concepts)));
    }
    let n = fk / batch;
    let flat = g.reshape(concepts, &[fk * k, d])?;
    let logits = mlp.logits(g, store, flat)?;
    let logits = g.reshape(logits, &[batch, n * k])?;
    Ok(VideoSide {
        frames: g.l2_normalize(frames)?,
        concepts: g.l2_normalize(flat)?,
        concept_weights: g.softmax(logits, None)?,
        batch,
        frames_per_video: n,
        concepts_per_frame: k,
    })
}

fn check_dims(g: &Graph, text: &TextSide, video: &VideoSide) -> Result<()> {
    let dt = g.shape(text.sentences)[1];
    let dv = g.shape(video.frames)[1];
    if dt != dv {
        return Err(Error::shape("similarity", g.shape(text.sentences), g.shape(video.frames)));
    }
    Ok(())
}

/// `[Bt, Bv]` sentence-frame scores.
pub fn sf_scores(g: &mut Graph, text: &TextSide, video: &VideoSide) -> Result<Var> {
    check_dims(g, text, video)?;
    let ft = g.transpose(video.frames)?;
    let s = g.matmul(text.sentences, ft)?;
    let s = g.reshape(s, &[text.batch, video.batch, video.frames_per_video])?;
    g.mean(s, 2)
}

/// `[Bt, Bv]` sentence-patch scores.
pub fn sp_scores(g: &mut Graph, text: &TextSide, video: &VideoSide) -> Result<Var> {
    check_dims(g, text, video)?;
    let ct = g.transpose(video.concepts)?;
    let s = g.matmul(text.sentences, ct)?;
    let s = g.reshape(s, &[text.batch, video.batch, video.frames_per_video, video.concepts_per_frame])?;
    let best = g.max(s, 3)?;
    g.mean(best, 2)
}

/// `[Bt, Bv]` word-patch scores, `(S_w2p + S_p2w) / 2`.
pub fn wp_scores(g: &mut Graph, text: &TextSide, video: &VideoSide) -> Result<Var> {
    check_dims(g, text, video)?;
    let (bt, lw, bv) = (text.batch, text.max_words, video.batch);
    let np = video.frames_per_video * video.concepts_per_frame;
    let ct = g.transpose(video.concepts)?;
    let s = g.matmul(text.words, ct)?; // [Bt*Lw, Bv*Np]

    // word -> patch: each word's best concept, weighted over words.
    let s4 = g.reshape(s, &[bt, lw, bv, np])?;
    let best_patch = g.max(s4, 3)?; // [Bt, Lw, Bv]
    let omega = g.reshape(text.word_weights, &[bt, 1, lw])?;
    let w2p = g.bmm(omega, best_patch)?;
    let w2p = g.reshape(w2p, &[bt, bv])?;

    // patch -> word: each concept's best valid word, weighted over concepts.
    let s3 = g.reshape(s, &[bt, lw, bv * np])?;
    let best_word = g.max_masked(s3, 1, Some(&text.valid))?; // [Bt, Bv*Np]
    let bw = g.transpose(best_word)?;
    let bw = g.reshape(bw, &[bv, np, bt])?;
    let nu = g.reshape(video.concept_weights, &[bv, 1, np])?;
    let p2w = g.bmm(nu, bw)?;
    let p2w = g.reshape(p2w, &[bv, bt])?;
    let p2w = g.transpose(p2w)?;

    let both = g.add(w2p, p2w)?;
    g.scale(both, 0.5)
}

pub fn scores(g: &mut Graph, gran: Granularity, text: &TextSide, video: &VideoSide) -> Result<Var> {
    match gran {
        Granularity::SentenceFrame => sf_scores(g, text, video),
        Granularity::SentencePatch => sp_scores(g, text, video),
        Granularity::WordPatch => wp_scores(g, text, video),
    }
}

// Single-pair forms. SP and WP run the batched graph path with one text and
// one video.

/// `T_s`: `[D]`; `frames`: `[N, D]`.
pub fn sf_similarity(sentence: &Tensor, frames: &Tensor) -> Result<f64> {
    if frames.rank() != 2 || sentence.shape() != [frames.dim(1)] {
        return Err(Error::shape("sf_similarity", sentence.shape(), frames.shape()));
    }
    let n = frames.dim(0);
    let mean = (0..n).map(|i| sim(sentence.data(), frames.row(i))).sum::<f64>() / n as f64;
    Ok(mean)
}

/// `T_s`: `[D]`; `concepts`: `[N, K, D]`.
pub fn sp_similarity(sentence: &Tensor, concepts: &Tensor) -> Result<f64> {
    if concepts.rank() != 3 || sentence.shape() != [concepts.dim(2)] {
        return Err(Error::shape("sp_similarity", sentence.shape(), concepts.shape()));
    }
    let mut g = Graph::new();
    let d = concepts.dim(2);
    let (n, k) = (concepts.dim(0), concepts.dim(1));
    let s = g.constant(sentence.reshape(vec![1, d])?);
    let c = g.constant(concepts.reshape(vec![n * k, d])?);
    let s = g.l2_normalize(s)?;
    let c = g.l2_normalize(c)?;
    let ct = g.transpose(c)?;
    let m = g.matmul(s, ct)?;
    let m = g.reshape(m, &[n, k])?;
    let best = g.max(m, 1)?;
    let v = g.mean(best, 0)?;
    Ok(g.value(v).item())
}

/// Word-patch similarity of one caption (`[Lw, D]` words, `count` valid) and
/// one video's `[N, K, D]` concepts.
pub fn wp_similarity(
    store: &ParamStore,
    words: &Tensor,
    count: usize,
    concepts: &Tensor,
    word_mlp: &WeightMlp,
    patch_mlp: &WeightMlp,
) -> Result<f64> {
    if count == 0 {
        return Err(Error::InvalidArgument("wp_similarity needs at least one word".into()));
    }
    if words.rank() != 2 || concepts.rank() != 3 || words.dim(1) != concepts.dim(2) {
        return Err(Error::shape("wp_similarity", words.shape(), concepts.shape()));
    }
    let (lw, d) = (words.dim(0), words.dim(1));
    let n = concepts.dim(0);
    let mut g = Graph::new();
    let w = g.constant(words.reshape(vec![1, lw, d])?);
    // The sentence does not enter WP; any finite row will do.
    let s = g.constant(Tensor::zeros(vec![1, d]));
    let text = encode_text(&mut g, store, word_mlp, s, w, &[count])?;
    let frames = g.constant(Tensor::zeros(vec![n, d]));
    let c = g.constant(concepts.clone());
    let video = encode_video(&mut g, store, patch_mlp, frames, c, 1)?;
    let v = wp_scores(&mut g, &text, &video)?;
    Ok(g.value(v).item())
}

/// One `[Bt, Bv]` score matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreComponent {
    /// Encoder layer label (from the dataset header).
    pub layer: u32,
    pub granularity: Granularity,
    pub scores: Tensor,
}

impl ScoreComponent {
    pub fn name(&self) -> String {
        format!("L{}.{}", self.layer, self.granularity)
    }
}

/// Per-layer, per-granularity score matrices and their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilaritySet {
    pub components: Vec<ScoreComponent>,
    pub total: Tensor,
}

impl SimilaritySet {
    pub fn from_components(components: Vec<ScoreComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidArgument("similarity set with no components".into()))?;
        let mut total = Tensor::zeros(first.scores.shape().to_vec());
        for c in &components {
            total = ops::add(&total, &c.scores)?;
        }
        Ok(Self { components, total })
    }

    pub fn get(&self, layer: u32, granularity: Granularity) -> Option<&Tensor> {
        self.components
            .iter()
            .find(|c| c.layer == layer && c.granularity == granularity)
            .map(|c| &c.scores)
    }
}

/// Graph-resident counterpart of [`SimilaritySet`].
#[derive(Clone, Debug)]
pub struct SimilarityVars {
    pub components: Vec<(u32, Granularity, Var)>,
    pub total: Var,
}

impl SimilarityVars {
    pub fn build(g: &mut Graph, components: Vec<(u32, Granularity, Var)>) -> Result<Self> {
        let mut iter = components.iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidArgument("similarity set with no components".into()))?
            .2;
        let mut total = first;
        for &(_, _, v) in iter {
            total = g.add(total, v)?;
        }
        Ok(Self { components, total })
    }

    pub fn materialize(&self, g: &Graph) -> SimilaritySet {
        SimilaritySet {
            components: self
                .components
                .iter()
                .map(|&(layer, granularity, v)| ScoreComponent {
                    layer,
                    granularity,
                    scores: g.value(v).clone(),
                })
                .collect(),
            total: g.value(self.total).clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mlps(d: usize) -> (ParamStore, WeightMlp, WeightMlp) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = WeightMlp::hidden_width(d);
        let a = WeightMlp::new(&mut store, "w", d, h, &mut rng);
        let b = WeightMlp::new(&mut store, "p", d, h, &mut rng);
        (store, a, b)
    }

    #[test]
    fn cosine_cases() {
        assert!((sim(&[0.3, -2.0], &[0.3, -2.0]) - 1.0).abs() < 1e-15);
        assert_eq!(sim(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((sim(&[3.0, 4.0], &[4.0, 3.0]) - 24.0 / 25.0).abs() < 1e-15);
        assert_eq!(sim(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn sf_mean_of_frame_cosines() {
        let s = Tensor::from_vec(vec![1.0, 0.0]);
        let f = Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 5.0]]).unwrap();
        assert!((sf_similarity(&s, &f).unwrap() - 0.5).abs() < 1e-15);
        let same = Tensor::from_rows(&[vec![1.0, 0.0], vec![3.0, 0.0]]).unwrap();
        assert!((sf_similarity(&s, &same).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sp_takes_best_concept() {
        // cos 0.2 and 0.9 against e1
        let s = Tensor::from_vec(vec![1.0, 0.0]);
        let c = Tensor::new(
            vec![1, 2, 2],
            vec![0.2, (1.0f64 - 0.04).sqrt(), 0.9, (1.0f64 - 0.81).sqrt()],
        )
        .unwrap();
        assert!((sp_similarity(&s, &c).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn wp_single_word_equal_to_single_concept() {
        let (store, a, b) = mlps(4);
        let w = Tensor::new(vec![1, 4], vec![0.5, -1.0, 2.0, 0.1]).unwrap();
        let c = w.reshape(vec![1, 1, 4]).unwrap();
        assert!((wp_similarity(&store, &w, 1, &c, &a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wp_rejects_zero_words() {
        let (store, a, b) = mlps(4);
        let w = Tensor::zeros(vec![2, 4]);
        let c = Tensor::full(vec![1, 1, 4], 1.0);
        assert!(wp_similarity(&store, &w, 0, &c, &a, &b).is_err());
    }

    #[test]
    fn similarity_set_total_is_sum() {
        let a = Tensor::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let b = a.map(|x| -2.0 * x);
        let set = SimilaritySet::from_components(vec![
            ScoreComponent {
                layer: 1,
                granularity: Granularity::SentenceFrame,
                scores: a.clone(),
            },
            ScoreComponent {
                layer: 1,
                granularity: Granularity::WordPatch,
                scores: b,
            },
        ])
        .unwrap();
        assert!(set.total.max_abs_diff(&a.map(|x| -x)) < 1e-15);
        assert!(set.get(1, Granularity::SentencePatch).is_none());
    }
}
