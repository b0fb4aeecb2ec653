//! Hierarchical feature bundles: per-layer frame and patch features for a
//! video, plus sentence and word features for its caption.

mod format;
mod synthetic;
mod validate;

use serde::{Deserialize, Serialize};

pub use format::{decode_dataset, encode_dataset, load_dataset, save_dataset, MAGIC};
pub use synthetic::{generate_splits, generate_synthetic, SyntheticConfig, SyntheticGenerator, SyntheticTruth};
pub use validate::{validate_dataset, ValidationReport, Violation};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Dataset-wide dimensions. Serialized field names are the on-disk header
/// keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub num_pairs: usize,
    #[serde(rename = "N")]
    pub frames: usize,
    #[serde(rename = "M")]
    pub patches: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "L_w_max")]
    pub max_words: usize,
    /// Encoder layer indices, shallow to deep.
    pub layers: Vec<u32>,
    pub dtype: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub pair_id: u32,
    /// Per layer, `[N, D]` frame ([CLS]) features.
    pub frames: Vec<Tensor>,
    /// Per layer, `[N, M, D]` patch features.
    pub patches: Vec<Tensor>,
    /// `[D]` sentence feature.
    pub sentence: Tensor,
    /// `[L_w_max, D]` word features; rows at or beyond `word_count` are zero.
    pub words: Tensor,
    pub word_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub bundles: Vec<FeatureBundle>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.header.layers.len()
    }

    /// A dataset over a subset of bundles, renumbered from 0.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let bundles: Vec<FeatureBundle> = indices
            .iter()
            .enumerate()
            .map(|(new_id, &i)| FeatureBundle {
                pair_id: new_id as u32,
                ..self.bundles[i].clone()
            })
            .collect();
        Dataset {
            header: DatasetHeader {
                num_pairs: bundles.len(),
                ..self.header.clone()
            },
            bundles,
        }
    }
}
