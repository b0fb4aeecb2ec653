//! Ablation runner: trains each variant with the base seed and compares
//! text-to-video R@1 against the full model.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::metrics::{evaluate, Direction, RetrievalReport};
use crate::features::{Dataset, FeatureBundle};
use crate::training::{train, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Only the deepest selected layer, with MPP.
    FinalLayerOnly,
    /// All base layers, raw patches fed straight to alignment.
    MultiLayerNoMpp,
    Full,
    LayersLast,
    LayersLast3,
    LayersShallowMidDeep,
    NoSf,
    NoSp,
    NoWp,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Self::FinalLayerOnly,
        Self::MultiLayerNoMpp,
        Self::Full,
        Self::LayersLast,
        Self::LayersLast3,
        Self::LayersShallowMidDeep,
        Self::NoSf,
        Self::NoSp,
        Self::NoWp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::FinalLayerOnly => "final-layer-only",
            Self::MultiLayerNoMpp => "multi-layer-no-mpp",
            Self::Full => "full",
            Self::LayersLast => "layers-last",
            Self::LayersLast3 => "layers-last3",
            Self::LayersShallowMidDeep => "layers-shallow-mid-deep",
            Self::NoSf => "no-sf",
            Self::NoSp => "no-sp",
            Self::NoWp => "no-wp",
        }
    }

    /// The training config of this variant for a dataset with
    /// `num_layers` layers.
    pub fn config(self, base: &TrainConfig, num_layers: usize) -> TrainConfig {
        let mut cfg = base.clone();
        let last = num_layers.saturating_sub(1);
        match self {
            Self::Full => {}
            Self::FinalLayerOnly => cfg.layers = vec![*base.layers.iter().max().unwrap_or(&last)],
            Self::MultiLayerNoMpp => cfg.use_mpp = false,
            Self::LayersLast => cfg.layers = vec![last],
            Self::LayersLast3 => cfg.layers = (num_layers.saturating_sub(3)..num_layers).collect(),
            Self::LayersShallowMidDeep => {
                let mut l = vec![0, last / 2, last];
                l.dedup();
                cfg.layers = l;
            }
            Self::NoSf => cfg.use_sf = false,
            Self::NoSp => cfg.use_sp = false,
            Self::NoWp => cfg.use_wp = false,
        }
        cfg
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|v| v.name()).collect();
                Error::InvalidArgument(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: &'static str,
    pub t2v: RetrievalReport,
    pub v2t: RetrievalReport,
    /// T2V R@1 minus the full model's.
    pub delta_r1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

#[derive(Serialize)]
struct JsonRow<'a> {
    variant: &'a str,
    direction: Direction,
    r1: f64,
    r5: f64,
    r10: f64,
    mdr: f64,
    mnr: f64,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
        let mut out = format!("{:<width$}  {:>7}  {:>7}  {:>7}\n", "variant", "t2v_r1", "delta", "v2t_r1");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.4}  {:>+7.4}  {:>7.4}",
                r.variant, r.t2v.r1, r.delta_r1, r.v2t.r1
            );
        }
        out
    }

    /// Two JSON lines per variant, one per direction.
    pub fn json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            for rep in [&r.t2v, &r.v2t] {
                out.push_str(&report_json(r.variant, rep)?);
                out.push('\n');
            }
        }
        Ok(out)
    }
}

/// `{variant, direction, r1, r5, r10, mdr, mnr}` as one JSON object.
pub fn report_json(variant: &str, rep: &RetrievalReport) -> Result<String> {
    Ok(serde_json::to_string(&JsonRow {
        variant,
        direction: rep.direction,
        r1: rep.r1,
        r5: rep.r5,
        r10: rep.r10,
        mdr: rep.mdr,
        mnr: rep.mnr,
    })?)
}

/// Trains and evaluates one config; returns (T2V, V2T) on `eval`.
pub fn train_and_evaluate(train_ds: &Dataset, eval_ds: &Dataset, cfg: &TrainConfig) -> Result<[RetrievalReport; 2]> {
    let out = train(train_ds, eval_ds, cfg)?;
    let refs: Vec<&FeatureBundle> = eval_ds.bundles.iter().collect();
    let sims = out.model.similarities(&refs, &refs)?;
    evaluate(&sims.total)
}

/// Runs `variants` in order. Variants that resolve to the same config share
/// one training run; the full model is always trained for the deltas.
pub fn run_ablations(
    train_ds: &Dataset,
    eval_ds: &Dataset,
    base: &TrainConfig,
    variants: &[Variant],
) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(Error::InvalidArgument("no ablation variants requested".into()));
    }
    let layers = train_ds.num_layers();
    let mut cache: Vec<(TrainConfig, [RetrievalReport; 2])> = Vec::new();
    let mut run = |cfg: TrainConfig| -> Result<[RetrievalReport; 2]> {
        if let Some((_, r)) = cache.iter().find(|(c, _)| *c == cfg) {
            return Ok(r.clone());
        }
        let r = train_and_evaluate(train_ds, eval_ds, &cfg)?;
        cache.push((cfg, r.clone()));
        Ok(r)
    };
    let full = run(Variant::Full.config(base, layers))?;
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let [t2v, v2t] = run(v.config(base, layers))?;
        rows.push(AblationRow {
            variant: v.name(),
            delta_r1: t2v.r1 - full[0].r1,
            t2v,
            v2t,
        });
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn layer_subsets() {
        let base = TrainConfig::default();
        assert_eq!(Variant::LayersLast.config(&base, 3).layers, vec![2]);
        assert_eq!(Variant::LayersLast3.config(&base, 5).layers, vec![2, 3, 4]);
        assert_eq!(Variant::LayersShallowMidDeep.config(&base, 5).layers, vec![0, 2, 4]);
        assert_eq!(Variant::LayersShallowMidDeep.config(&base, 2).layers, vec![0, 1]);
        assert!(!Variant::NoWp.config(&base, 3).use_wp);
    }
}
