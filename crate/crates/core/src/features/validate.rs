use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub pair_id: Option<u32>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pair_id {
            Some(id) => write!(f, "pair {id}: {}", self.message),
            None => write!(f, "dataset: {}", self.message),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every bundle and dataset invariant, collecting all violations.
pub fn validate_dataset(ds: &Dataset) -> ValidationReport {
    let h = &ds.header;
    let mut out = Vec::new();
    let mut push = |pair_id: Option<u32>, message: String| out.push(Violation { pair_id, message });

    if h.num_pairs != ds.bundles.len() {
        push(
            None,
            format!("header num_pairs={} but {} bundles", h.num_pairs, ds.bundles.len()),
        );
    }
    if h.layers.is_empty() {
        push(None, "empty layer list".into());
    }
    if h.dtype != "f32" {
        push(None, format!("unsupported dtype `{}`", h.dtype));
    }

    let mut seen = HashSet::new();
    for b in &ds.bundles {
        let id = Some(b.pair_id);
        if !seen.insert(b.pair_id) {
            push(id, "duplicate pair_id".into());
        }
        if b.frames.len() != h.layers.len() || b.patches.len() != h.layers.len() {
            push(
                id,
                format!(
                    "{} frame / {} patch layers, header lists {}",
                    b.frames.len(),
                    b.patches.len(),
                    h.layers.len()
                ),
            );
        }
        for (l, f) in b.frames.iter().enumerate() {
            if f.shape() != [h.frames, h.dim] {
                push(id, format!("layer {l} frame shape {:?} != [{}, {}]", f.shape(), h.frames, h.dim));
            }
        }
        for (l, p) in b.patches.iter().enumerate() {
            if p.shape() != [h.frames, h.patches, h.dim] {
                push(
                    id,
                    format!(
                        "layer {l} patch shape {:?} != [{}, {}, {}]",
                        p.shape(),
                        h.frames,
                        h.patches,
                        h.dim
                    ),
                );
            }
        }
        if b.sentence.shape() != [h.dim] {
            push(id, format!("sentence shape {:?} != [{}]", b.sentence.shape(), h.dim));
        }
        if b.words.shape() != [h.max_words, h.dim] {
            push(id, format!("word shape {:?} != [{}, {}]", b.words.shape(), h.max_words, h.dim));
        } else {
            if b.word_count == 0 || b.word_count > h.max_words {
                push(id, format!("word count {} outside 1..={}", b.word_count, h.max_words));
            }
            for row in b.word_count.min(h.max_words)..h.max_words {
                if b.words.row(row).iter().any(|&v| v != 0.0) {
                    push(id, format!("padded word row {row} is nonzero"));
                }
            }
        }
        let finite = b.frames.iter().chain(&b.patches).all(|t| t.all_finite())
            && b.sentence.all_finite()
            && b.words.all_finite();
        if !finite {
            push(id, "non-finite feature value".into());
        }
    }
    let mut ids: Vec<u32> = seen.into_iter().collect();
    ids.sort_unstable();
    if ids.iter().enumerate().any(|(i, &id)| id as usize != i) {
        push(None, "pair_ids are not contiguous from 0".into());
    }
    ValidationReport { violations: out }
}
