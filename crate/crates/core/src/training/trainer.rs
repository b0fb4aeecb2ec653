//! Deterministic training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::WeightMlp;
use crate::autograd::Graph;
use crate::error::{Error, Result};
use crate::eval::metrics::{ranks, Direction, RetrievalReport};
use crate::features::{Dataset, FeatureBundle};
use crate::model::{HvpModel, ModelConfig, Toggles};
use crate::training::optim::{AdamW, AdamWConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Positions into the dataset's layer list.
    pub layers: Vec<usize>,
    pub keep_ratios: Vec<f64>,
    pub density_quantile: f64,
    pub heads: usize,
    pub use_mpp: bool,
    pub share_mpp: bool,
    pub per_layer_mlp: bool,
    pub use_sf: bool,
    pub use_sp: bool,
    pub use_wp: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init_temperature: f64,
    /// Std of the attention output projection at initialization.
    pub attn_out_std: f64,
    /// Hidden width of the token-weight MLPs; `max(4, D/4)` when unset.
    pub mlp_hidden: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layers: vec![0, 1, 2],
            keep_ratios: vec![0.5, 0.5],
            density_quantile: 0.1,
            heads: 1,
            use_mpp: true,
            share_mpp: false,
            per_layer_mlp: false,
            use_sf: true,
            use_sp: true,
            use_wp: true,
            lr: 1e-4,
            weight_decay: 0.2,
            batch_size: 32,
            epochs: 5,
            seed: 7,
            init_temperature: 0.07,
            attn_out_std: 0.02,
            mlp_hidden: None,
        }
    }
}

impl TrainConfig {
    pub fn toggles(&self) -> Toggles {
        Toggles {
            use_sf: self.use_sf,
            use_sp: self.use_sp,
            use_wp: self.use_wp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("lr and weight_decay must be non-negative".into()));
        }
        if self.toggles().active().is_empty() {
            return Err(Error::Config("all alignment granularities are disabled".into()));
        }
        let mut seen = self.layers.clone();
        seen.sort_unstable();
        seen.dedup();
        if self.layers.is_empty() || seen.len() != self.layers.len() {
            return Err(Error::Config(format!("layers must be non-empty and distinct, got {:?}", self.layers)));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    /// Resolves the model shape for a dataset with this header.
    pub fn model_config(&self, ds: &Dataset) -> Result<ModelConfig> {
        self.validate()?;
        let h = &ds.header;
        let layer_labels = self
            .layers
            .iter()
            .map(|&p| {
                h.layers.get(p).copied().ok_or_else(|| {
                    Error::Config(format!("layer position {p} out of range for dataset layers {:?}", h.layers))
                })
            })
            .collect::<Result<_>>()?;
        if self.use_mpp && crate::mpp::composed_k(h.patches, &self.keep_ratios) == 0 {
            return Err(Error::Config("keep_ratios leave no concept tokens".into()));
        }
        Ok(ModelConfig {
            dim: h.dim,
            layers: self.layers.clone(),
            layer_labels,
            keep_ratios: self.keep_ratios.clone(),
            density_quantile: self.density_quantile,
            heads: self.heads,
            use_mpp: self.use_mpp,
            share_mpp: self.share_mpp,
            per_layer_mlp: self.per_layer_mlp,
            toggles: self.toggles(),
            mlp_hidden: self.mlp_hidden.unwrap_or_else(|| WeightMlp::hidden_width(h.dim)),
            attn_out_std: self.attn_out_std,
            init_temperature: self.init_temperature,
        })
    }
}

/// One history row. Epoch 0 describes the initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the epoch's batches.
    pub train_loss: Option<f64>,
    pub val_t2v_r1: Option<f64>,
    pub val_v2t_r1: Option<f64>,
    pub steps: u64,
}

pub struct TrainOutcome {
    pub model: HvpModel,
    pub history: Vec<EpochRecord>,
}

fn refs(ds: &Dataset) -> Vec<&FeatureBundle> {
    ds.bundles.iter().collect()
}

/// Validation R@1 in both directions.
pub fn val_r1(model: &HvpModel, val: &Dataset) -> Result<(f64, f64)> {
    let v = refs(val);
    let sims = model.similarities(&v, &v)?;
    let t2v = RetrievalReport::from_ranks(Direction::TextToVideo, &ranks(&sims.total, Direction::TextToVideo)?)?;
    let v2t = RetrievalReport::from_ranks(Direction::VideoToText, &ranks(&sims.total, Direction::VideoToText)?)?;
    Ok((t2v.r1, v2t.r1))
}

/// Loss of one batch; gradients accumulate into the model's store.
pub fn batch_step(model: &mut HvpModel, batch: &[&FeatureBundle]) -> Result<f64> {
    let mut g = Graph::new();
    let loss = model.loss_with(&mut g, &model.store, batch)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite { op: "loss" });
    }
    model.store.zero_grads();
    g.backward(loss, &mut model.store)?;
    Ok(value)
}

fn check_datasets(train: &Dataset, val: &Dataset) -> Result<()> {
    let (a, b) = (&train.header, &val.header);
    if (a.dim, a.frames, a.patches, &a.layers) != (b.dim, b.frames, b.patches, &b.layers) {
        return Err(Error::Incompatible(format!(
            "train dims (N={}, M={}, D={}, layers {:?}) differ from val dims (N={}, M={}, D={}, layers {:?})",
            a.frames, a.patches, a.dim, a.layers, b.frames, b.patches, b.dim, b.layers
        )));
    }
    Ok(())
}

pub fn train(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(train, val, cfg, |_| true)
}

/// Trains, calling `on_epoch` after every history row; returning `false`
/// stops training after that epoch.
pub fn train_with(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> bool,
) -> Result<TrainOutcome> {
    check_datasets(train, val)?;
    let model_cfg = cfg.model_config(train)?;
    if train.len() < cfg.batch_size && cfg.epochs > 0 {
        return Err(Error::Config(format!(
            "batch_size {} exceeds the {} training pairs",
            cfg.batch_size,
            train.len()
        )));
    }
    let mut model = HvpModel::new(model_cfg, cfg.seed)?;
    let mut opt = AdamW::new(cfg.adamw(), &model.store);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);

    let eval = |model: &HvpModel| -> Result<(Option<f64>, Option<f64>)> {
        if val.is_empty() {
            return Ok((None, None));
        }
        let (t, v) = val_r1(model, val)?;
        Ok((Some(t), Some(v)))
    };

    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let (t, v) = eval(&model)?;
    history.push(EpochRecord {
        epoch: 0,
        train_loss: None,
        val_t2v_r1: t,
        val_v2t_r1: v,
        steps: 0,
    });
    if !on_epoch(&history[0]) {
        return Ok(TrainOutcome { model, history });
    }

    let all = refs(train);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (bi, chunk) in order.chunks_exact(cfg.batch_size).enumerate() {
            let batch: Vec<&FeatureBundle> = chunk.iter().map(|&i| all[i]).collect();
            let loss = batch_step(&mut model, &batch).map_err(|e| match e {
                Error::NonFinite { .. } => Error::NonFiniteLoss { epoch, batch: bi },
                other => other,
            })?;
            opt.step(&mut model.store).map_err(|e| match e {
                Error::NonFinite { .. } => Error::NonFiniteLoss { epoch, batch: bi },
                other => other,
            })?;
            sum += loss;
            count += 1;
        }
        let (t, v) = eval(&model)?;
        history.push(EpochRecord {
            epoch,
            train_loss: Some(sum / count as f64),
            val_t2v_r1: t,
            val_v2t_r1: v,
            steps: opt.steps(),
        });
        if !on_epoch(history.last().unwrap()) {
            break;
        }
    }
    Ok(TrainOutcome { model, history })
}
