//! The full retrieval head: per-layer MPP stacks, token-weight MLPs and
//! per-granularity temperatures, with batched and chunked scoring.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{self, Granularity, ScoreComponent, SimilaritySet, SimilarityVars, TextSide, VideoSide, WeightMlp};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::features::{DatasetHeader, FeatureBundle};
use crate::mpp::{BlockInit, MppStack};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::training::loss::{total_loss, Temperature};

/// Which granularities contribute to the loss and to the retrieval score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub use_sf: bool,
    pub use_sp: bool,
    pub use_wp: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            use_sf: true,
            use_sp: true,
            use_wp: true,
        }
    }
}

impl Toggles {
    pub fn enabled(&self, g: Granularity) -> bool {
        match g {
            Granularity::SentenceFrame => self.use_sf,
            Granularity::SentencePatch => self.use_sp,
            Granularity::WordPatch => self.use_wp,
        }
    }

    pub fn active(&self) -> Vec<Granularity> {
        Granularity::ALL.into_iter().filter(|&g| self.enabled(g)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    /// Positions into the dataset's layer list.
    pub layers: Vec<usize>,
    /// Header labels of the selected layers.
    pub layer_labels: Vec<u32>,
    pub keep_ratios: Vec<f64>,
    pub density_quantile: f64,
    pub heads: usize,
    pub use_mpp: bool,
    pub share_mpp: bool,
    pub per_layer_mlp: bool,
    pub toggles: Toggles,
    pub mlp_hidden: usize,
    pub attn_out_std: f64,
    pub init_temperature: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("at least one layer must be selected".into()));
        }
        if self.layer_labels.len() != self.layers.len() {
            return Err(Error::Config("one label per selected layer required".into()));
        }
        if self.toggles.active().is_empty() {
            return Err(Error::Config("all alignment granularities are disabled".into()));
        }
        if self.mlp_hidden == 0 || self.dim == 0 {
            return Err(Error::Config("dim and mlp_hidden must be positive".into()));
        }
        if !(self.init_temperature > 0.0) {
            return Err(Error::Config("init_temperature must be positive".into()));
        }
        Ok(())
    }

    /// Errors when the dataset cannot feed this model.
    pub fn check_compatible(&self, header: &DatasetHeader) -> Result<()> {
        if header.dim != self.dim {
            return Err(Error::Incompatible(format!(
                "model expects D={}, dataset has D={}",
                self.dim, header.dim
            )));
        }
        for (&pos, &label) in self.layers.iter().zip(&self.layer_labels) {
            match header.layers.get(pos) {
                Some(&l) if l == label => {}
                found => {
                    return Err(Error::Incompatible(format!(
                        "model uses layer {label} at position {pos}, dataset layers are {:?} (found {found:?})",
                        header.layers
                    )))
                }
            }
        }
        Ok(())
    }
}

pub struct HvpModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    stacks: Vec<MppStack>,
    word_mlps: Vec<WeightMlp>,
    patch_mlps: Vec<WeightMlp>,
    pub temperatures: [Temperature; 3],
}

/// Text-side tensors detached from the graph that produced them.
#[derive(Clone)]
struct TextValues {
    sentences: Tensor,
    words: Tensor,
    word_weights: Tensor,
    valid: Vec<bool>,
    batch: usize,
    max_words: usize,
}

struct VideoValues {
    frames: Tensor,
    concepts: Tensor,
    concept_weights: Tensor,
    batch: usize,
    frames_per_video: usize,
    concepts_per_frame: usize,
}

impl TextValues {
    fn detach(g: &Graph, t: &TextSide) -> Self {
        Self {
            sentences: g.value(t.sentences).clone(),
            words: g.value(t.words).clone(),
            word_weights: g.value(t.word_weights).clone(),
            valid: t.valid.clone(),
            batch: t.batch,
            max_words: t.max_words,
        }
    }

    fn attach(&self, g: &mut Graph) -> TextSide {
        TextSide {
            sentences: g.constant(self.sentences.clone()),
            words: g.constant(self.words.clone()),
            word_weights: g.constant(self.word_weights.clone()),
            valid: self.valid.clone(),
            batch: self.batch,
            max_words: self.max_words,
        }
    }
}

impl VideoValues {
    fn detach(g: &Graph, v: &VideoSide) -> Self {
        Self {
            frames: g.value(v.frames).clone(),
            concepts: g.value(v.concepts).clone(),
            concept_weights: g.value(v.concept_weights).clone(),
            batch: v.batch,
            frames_per_video: v.frames_per_video,
            concepts_per_frame: v.concepts_per_frame,
        }
    }

    fn attach(&self, g: &mut Graph) -> VideoSide {
        VideoSide {
            frames: g.constant(self.frames.clone()),
            concepts: g.constant(self.concepts.clone()),
            concept_weights: g.constant(self.concept_weights.clone()),
            batch: self.batch,
            frames_per_video: self.frames_per_video,
            concepts_per_frame: self.concepts_per_frame,
        }
    }
}

/// Bundles scored per block when materializing large similarity matrices.
pub const SCORE_CHUNK: usize = 64;

fn stack_rows(parts: Vec<&Tensor>, shape: Vec<usize>) -> Result<Tensor> {
    let data: Vec<f64> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(shape, data)
}

impl HvpModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let init = BlockInit {
            dim: config.dim,
            heads: config.heads,
            out_std: config.attn_out_std,
        };
        let mut stacks = Vec::new();
        if config.use_mpp {
            if config.share_mpp {
                stacks.push(MppStack::new(&mut store, "mpp.shared", init, &config.keep_ratios, config.density_quantile, &mut rng)?);
            } else {
                for &label in &config.layer_labels {
                    stacks.push(MppStack::new(
                        &mut store,
                        &format!("mpp.L{label}"),
                        init,
                        &config.keep_ratios,
                        config.density_quantile,
                        &mut rng,
                    )?);
                }
            }
        }
        let mlp_names: Vec<String> = if config.per_layer_mlp {
            config.layer_labels.iter().map(|l| format!(".L{l}")).collect()
        } else {
            vec![String::new()]
        };
        let word_mlps = mlp_names
            .iter()
            .map(|s| WeightMlp::new(&mut store, &format!("word_mlp{s}"), config.dim, config.mlp_hidden, &mut rng))
            .collect();
        let patch_mlps = mlp_names
            .iter()
            .map(|s| WeightMlp::new(&mut store, &format!("patch_mlp{s}"), config.dim, config.mlp_hidden, &mut rng))
            .collect();
        let temperatures = Granularity::ALL.map(|gr| Temperature::new(&mut store, &format!("temp.{gr}"), config.init_temperature));
        Ok(Self {
            config,
            store,
            stacks,
            word_mlps,
            patch_mlps,
            temperatures,
        })
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn stack_for(&self, slot: usize) -> Option<&MppStack> {
        if self.stacks.is_empty() {
            None
        } else if self.config.share_mpp {
            Some(&self.stacks[0])
        } else {
            Some(&self.stacks[slot])
        }
    }

    pub fn word_mlp(&self, slot: usize) -> &WeightMlp {
        &self.word_mlps[if self.config.per_layer_mlp { slot } else { 0 }]
    }

    pub fn patch_mlp(&self, slot: usize) -> &WeightMlp {
        &self.patch_mlps[if self.config.per_layer_mlp { slot } else { 0 }]
    }

    /// Concept tokens per frame produced for `m` input patches.
    pub fn concepts_per_frame(&self, m: usize) -> usize {
        self.stack_for(0).map_or(m, |s| s.output_tokens(m))
    }

    fn check_bundles(&self, bundles: &[&FeatureBundle]) -> Result<()> {
        let first = bundles
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let needed = self.config.layers.iter().max().copied().unwrap_or(0) + 1;
        for b in bundles {
            if b.frames.len() < needed {
                return Err(Error::Incompatible(format!(
                    "model uses layer position {}, bundle {} has {} layers",
                    needed - 1,
                    b.pair_id,
                    b.frames.len()
                )));
            }
            if b.sentence.len() != self.config.dim {
                return Err(Error::Incompatible(format!(
                    "model expects D={}, bundle {} has D={}",
                    self.config.dim,
                    b.pair_id,
                    b.sentence.len()
                )));
            }
            if b.words.shape() != first.words.shape() || b.patches[0].shape() != first.patches[0].shape() {
                return Err(Error::Incompatible("bundles in a batch must share dimensions".into()));
            }
        }
        Ok(())
    }

    /// Text features for one layer slot.
    pub fn text_side(&self, g: &mut Graph, store: &ParamStore, texts: &[&FeatureBundle], slot: usize) -> Result<TextSide> {
        let d = self.config.dim;
        let lw = texts[0].words.dim(0);
        let bt = texts.len();
        let sentences = stack_rows(texts.iter().map(|b| &b.sentence).collect(), vec![bt, d])?;
        let words = stack_rows(texts.iter().map(|b| &b.words).collect(), vec![bt, lw, d])?;
        let counts: Vec<usize> = texts.iter().map(|b| b.word_count).collect();
        let s = g.constant(sentences);
        let w = g.constant(words);
        alignment::encode_text(g, store, self.word_mlp(slot), s, w, &counts)
    }

    /// Raw `[Bv * N, M, D]` patches of one layer slot as a graph constant.
    pub fn patch_input(&self, g: &mut Graph, videos: &[&FeatureBundle], slot: usize) -> Result<Var> {
        let pos = self.config.layers[slot];
        let shape = videos[0].patches[pos].shape();
        let (n, m, d) = (shape[0], shape[1], shape[2]);
        let t = stack_rows(videos.iter().map(|b| &b.patches[pos]).collect(), vec![videos.len() * n, m, d])?;
        Ok(g.constant(t))
    }

    /// Video features for one layer slot, running MPP when enabled.
    pub fn video_side(&self, g: &mut Graph, store: &ParamStore, videos: &[&FeatureBundle], slot: usize) -> Result<VideoSide> {
        let pos = self.config.layers[slot];
        let n = videos[0].frames[pos].dim(0);
        let d = self.config.dim;
        let frames = stack_rows(videos.iter().map(|b| &b.frames[pos]).collect(), vec![videos.len() * n, d])?;
        let frames = g.constant(frames);
        let patches = self.patch_input(g, videos, slot)?;
        let concepts = match self.stack_for(slot) {
            Some(stack) => stack.forward(g, store, patches)?,
            None => patches,
        };
        alignment::encode_video(g, store, self.patch_mlp(slot), frames, concepts, videos.len())
    }

    /// Records every enabled `[Bt, Bv]` score matrix on the graph.
    pub fn forward(&self, g: &mut Graph, texts: &[&FeatureBundle], videos: &[&FeatureBundle]) -> Result<SimilarityVars> {
        self.forward_with(g, &self.store, texts, videos)
    }

    /// [`HvpModel::forward`] reading parameter values from `store`, which must
    /// share this model's layout.
    pub fn forward_with(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        texts: &[&FeatureBundle],
        videos: &[&FeatureBundle],
    ) -> Result<SimilarityVars> {
        self.check_bundles(texts)?;
        self.check_bundles(videos)?;
        let active = self.config.toggles.active();
        let mut components = Vec::new();
        let mut shared_text = None;
        for (slot, &label) in self.config.layer_labels.iter().enumerate() {
            let text = match (&shared_text, self.config.per_layer_mlp) {
                (Some(t), false) => TextSide::clone(t),
                _ => {
                    let t = self.text_side(g, store, texts, slot)?;
                    shared_text = Some(t.clone());
                    t
                }
            };
            let video = self.video_side(g, store, videos, slot)?;
            for &gran in &active {
                components.push((label, gran, alignment::scores(g, gran, &text, &video)?));
            }
        }
        SimilarityVars::build(g, components)
    }

    /// Training loss of one batch of matching pairs.
    pub fn loss_with(&self, g: &mut Graph, store: &ParamStore, batch: &[&FeatureBundle]) -> Result<Var> {
        let sims = self.forward_with(g, store, batch, batch)?;
        let t = &self.temperatures;
        let scales = [t[0].scale(g, store)?, t[1].scale(g, store)?, t[2].scale(g, store)?];
        total_loss(g, &sims, &scales, &self.config.toggles)
    }

    /// Score matrices for equally sized text and video batches.
    pub fn batch_similarities(&self, texts: &[&FeatureBundle], videos: &[&FeatureBundle]) -> Result<SimilaritySet> {
        if texts.len() != videos.len() {
            return Err(Error::InvalidArgument(format!(
                "batch size mismatch: {} texts vs {} videos",
                texts.len(),
                videos.len()
            )));
        }
        self.similarities(texts, videos)
    }

    /// Score matrices for arbitrary text and video sets, computed in blocks
    /// of [`SCORE_CHUNK`] so memory stays bounded.
    pub fn similarities(&self, texts: &[&FeatureBundle], videos: &[&FeatureBundle]) -> Result<SimilaritySet> {
        self.check_bundles(texts)?;
        self.check_bundles(videos)?;
        let (bt, bv) = (texts.len(), videos.len());
        let slots = self.config.layers.len();

        let mut text_parts: Vec<Vec<TextValues>> = Vec::new();
        for chunk in texts.chunks(SCORE_CHUNK) {
            let mut g = Graph::new();
            let mut per_slot = Vec::with_capacity(slots);
            for slot in 0..slots {
                if slot > 0 && !self.config.per_layer_mlp {
                    let first: &TextValues = &per_slot[0];
                    per_slot.push(first.clone());
                    continue;
                }
                let t = self.text_side(&mut g, &self.store, chunk, slot)?;
                per_slot.push(TextValues::detach(&g, &t));
            }
            text_parts.push(per_slot);
        }
        let mut video_parts: Vec<Vec<VideoValues>> = Vec::new();
        for chunk in videos.chunks(SCORE_CHUNK) {
            let mut per_slot = Vec::with_capacity(slots);
            for slot in 0..slots {
                let mut g = Graph::new();
                let v = self.video_side(&mut g, &self.store, chunk, slot)?;
                per_slot.push(VideoValues::detach(&g, &v));
            }
            video_parts.push(per_slot);
        }

        let active = self.config.toggles.active();
        let mut components = Vec::new();
        for (slot, &label) in self.config.layer_labels.iter().enumerate() {
            for &gran in &active {
                let mut full = Tensor::zeros(vec![bt, bv]);
                for (ti, tp) in text_parts.iter().enumerate() {
                    for (vi, vp) in video_parts.iter().enumerate() {
                        let mut g = Graph::new();
                        let t = tp[slot].attach(&mut g);
                        let v = vp[slot].attach(&mut g);
                        let s = alignment::scores(&mut g, gran, &t, &v)?;
                        let block = g.value(s);
                        let (r0, c0) = (ti * SCORE_CHUNK, vi * SCORE_CHUNK);
                        for r in 0..block.dim(0) {
                            for c in 0..block.dim(1) {
                                full.data_mut()[(r0 + r) * bv + c0 + c] = block.at(r, c);
                            }
                        }
                    }
                }
                components.push(ScoreComponent {
                    layer: label,
                    granularity: gran,
                    scores: full,
                });
            }
        }
        SimilaritySet::from_components(components)
    }
}
