//! Synthetic hierarchical features with planted cross-modal structure.
//!
//! A bank of unit concept vectors lives in a latent space of dimension
//! `latent_dim`. Text and every encoder layer see the latent space through
//! their own linear map into feature space. All maps share a common base
//! component and differ by an independent per-modality deviation whose
//! relative size is `modality_gap`, mimicking a pre-aligned backbone where
//! different layers carry correlated but distinct views.
//!
//! Per pair, `concepts_per_pair` distinct concepts form the caption: one word
//! per concept, a sentence vector from their mean. Every frame of the paired
//! video holds one patch per caption concept at random positions, with the
//! remaining patches showing random non-caption concepts (distractors).
//! Frame vectors come from the concept mean. Patch layouts are shared across
//! layers; noise is drawn independently for every emitted vector.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetHeader, FeatureBundle, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_pairs: usize,
    pub concept_bank_size: usize,
    pub latent_dim: usize,
    pub concepts_per_pair: usize,
    pub noise_sigma: f64,
    pub frames: usize,
    pub patches: usize,
    pub dim: usize,
    pub max_words: usize,
    pub num_layers: usize,
    pub modality_gap: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_pairs: 256,
            concept_bank_size: 64,
            latent_dim: 16,
            concepts_per_pair: 3,
            noise_sigma: 0.1,
            frames: 4,
            patches: 16,
            dim: 32,
            max_words: 6,
            num_layers: 3,
            modality_gap: 0.5,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let c = self.concepts_per_pair;
        for (name, v) in [
            ("num_pairs", self.num_pairs),
            ("concept_bank_size", self.concept_bank_size),
            ("latent_dim", self.latent_dim),
            ("concepts_per_pair", c),
            ("frames", self.frames),
            ("patches", self.patches),
            ("dim", self.dim),
            ("max_words", self.max_words),
            ("num_layers", self.num_layers),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if c > self.max_words {
            return fail(format!("concepts_per_pair ({c}) exceeds max_words ({})", self.max_words));
        }
        if c > self.patches {
            return fail(format!("concepts_per_pair ({c}) exceeds patches ({})", self.patches));
        }
        if self.latent_dim > self.dim {
            return fail(format!("latent_dim ({}) exceeds dim ({})", self.latent_dim, self.dim));
        }
        if c > self.concept_bank_size || (c == self.concept_bank_size && self.patches > c) {
            return fail(format!(
                "concept_bank_size ({}) leaves no distractor concepts for {c} concepts per pair",
                self.concept_bank_size
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if !(self.modality_gap >= 0.0 && self.modality_gap.is_finite()) {
            return fail(format!("modality_gap must be finite and >= 0, got {}", self.modality_gap));
        }
        Ok(())
    }

    /// Layer labels written to the header: the ViT-B layers {1, 6, 12} when
    /// three layers are emulated, otherwise `1..=num_layers`.
    pub fn layer_labels(&self) -> Vec<u32> {
        if self.num_layers == 3 {
            vec![1, 6, 12]
        } else {
            (1..=self.num_layers as u32).collect()
        }
    }
}

/// Latent ground truth behind a generated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTruth {
    /// Caption concepts per pair, in word order.
    pub pair_concepts: Vec<Vec<usize>>,
    /// Concept shown by each patch: `[pair][frame][patch]`.
    pub patch_concepts: Vec<Vec<Vec<usize>>>,
}

/// Holds the concept bank and projection maps; splits drawn from one
/// generator share them.
pub struct SyntheticGenerator {
    cfg: SyntheticConfig,
    bank: Vec<Vec<f64>>,
    text_map: Vec<f64>,
    layer_maps: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

impl SyntheticGenerator {
    pub fn new(cfg: &SyntheticConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dz = cfg.latent_dim;
        let bank = (0..cfg.concept_bank_size)
            .map(|_| {
                let mut v = gaussian(&mut rng, dz, 1.0);
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
                v
            })
            .collect();
        let std = 1.0 / (dz as f64).sqrt();
        let base = gaussian(&mut rng, cfg.dim * dz, std);
        let norm = 1.0 / (1.0 + cfg.modality_gap * cfg.modality_gap).sqrt();
        let deviate = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            gaussian(rng, cfg.dim * dz, std)
                .iter()
                .zip(&base)
                .map(|(e, b)| (b + cfg.modality_gap * e) * norm)
                .collect()
        };
        let text_map = deviate(&mut rng);
        let layer_maps = (0..cfg.num_layers).map(|_| deviate(&mut rng)).collect();
        Ok(Self {
            cfg: cfg.clone(),
            bank,
            text_map,
            layer_maps,
        })
    }

    pub fn config(&self) -> &SyntheticConfig {
        &self.cfg
    }

    fn project(&self, map: &[f64], z: &[f64], rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
        let dz = self.cfg.latent_dim;
        for r in 0..self.cfg.dim {
            let clean: f64 = map[r * dz..(r + 1) * dz].iter().zip(z).map(|(a, b)| a * b).sum();
            let noise = self.cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
            out.push(quantize(clean + noise));
        }
    }

    fn mean_concept(&self, concepts: &[usize]) -> Vec<f64> {
        let mut z = vec![0.0; self.cfg.latent_dim];
        for &c in concepts {
            for (a, b) in z.iter_mut().zip(&self.bank[c]) {
                *a += b / concepts.len() as f64;
            }
        }
        z
    }

    pub fn generate(&self, num_pairs: usize, split: Split) -> Result<(Dataset, SyntheticTruth)> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1 + split as u64);
        let (n, m, d, lw, c) = (cfg.frames, cfg.patches, cfg.dim, cfg.max_words, cfg.concepts_per_pair);

        let mut bundles = Vec::with_capacity(num_pairs);
        let mut truth = SyntheticTruth {
            pair_concepts: Vec::with_capacity(num_pairs),
            patch_concepts: Vec::with_capacity(num_pairs),
        };
        for pair in 0..num_pairs {
            let concepts: Vec<usize> = sample(&mut rng, cfg.concept_bank_size, c).into_vec();
            let others: Vec<usize> = (0..cfg.concept_bank_size).filter(|k| !concepts.contains(k)).collect();

            let layouts: Vec<Vec<usize>> = (0..n)
                .map(|_| {
                    let mut layout: Vec<usize> = (0..m).map(|_| others[rng.random_range(0..others.len())]).collect();
                    for (slot, &concept) in sample(&mut rng, m, c).iter().zip(&concepts) {
                        layout[slot] = concept;
                    }
                    layout
                })
                .collect();

            let mut words = Vec::with_capacity(lw * d);
            for &k in &concepts {
                self.project(&self.text_map, &self.bank[k], &mut rng, &mut words);
            }
            words.resize(lw * d, 0.0);
            let mean = self.mean_concept(&concepts);
            let mut sentence = Vec::with_capacity(d);
            self.project(&self.text_map, &mean, &mut rng, &mut sentence);

            let mut frames = Vec::with_capacity(cfg.num_layers);
            let mut patches = Vec::with_capacity(cfg.num_layers);
            for map in &self.layer_maps {
                let mut f = Vec::with_capacity(n * d);
                let mut p = Vec::with_capacity(n * m * d);
                for layout in &layouts {
                    self.project(map, &mean, &mut rng, &mut f);
                    for &k in layout {
                        self.project(map, &self.bank[k], &mut rng, &mut p);
                    }
                }
                frames.push(Tensor::new(vec![n, d], f)?);
                patches.push(Tensor::new(vec![n, m, d], p)?);
            }

            bundles.push(FeatureBundle {
                pair_id: pair as u32,
                frames,
                patches,
                sentence: Tensor::new(vec![d], sentence)?,
                words: Tensor::new(vec![lw, d], words)?,
                word_count: c,
            });
            truth.pair_concepts.push(concepts);
            truth.patch_concepts.push(layouts);
        }
        let header = DatasetHeader {
            num_pairs,
            frames: n,
            patches: m,
            dim: d,
            max_words: lw,
            layers: cfg.layer_labels(),
            dtype: "f32".into(),
            split,
        };
        Ok((Dataset { header, bundles }, truth))
    }
}

/// A single training split of `cfg.num_pairs` pairs.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    Ok(SyntheticGenerator::new(cfg)?.generate(cfg.num_pairs, Split::Train)?.0)
}

/// Train (`cfg.num_pairs`), val and test splits sharing one concept bank and
/// one set of projection maps.
pub fn generate_splits(cfg: &SyntheticConfig, val_pairs: usize, test_pairs: usize) -> Result<[Dataset; 3]> {
    let g = SyntheticGenerator::new(cfg)?;
    Ok([
        g.generate(cfg.num_pairs, Split::Train)?.0,
        g.generate(val_pairs, Split::Val)?.0,
        g.generate(test_pairs, Split::Test)?.0,
    ])
}
