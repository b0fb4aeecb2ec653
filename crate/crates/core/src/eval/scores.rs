//! Score matrix export: a binary container (`f64` payload, bit-exact) and a
//! plain-text dump for inspection.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{Granularity, ScoreComponent, SimilaritySet};
use crate::container::{self, put_f64s};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SCORES_MAGIC: &[u8; 4] = b"HVPS";

#[derive(Serialize, Deserialize)]
struct ComponentEntry {
    layer: u32,
    granularity: Granularity,
}

#[derive(Serialize, Deserialize)]
struct ScoresHeader {
    texts: usize,
    videos: usize,
    dtype: String,
    /// Payload order after the total matrix.
    components: Vec<ComponentEntry>,
}

pub fn encode_scores(set: &SimilaritySet) -> Result<Vec<u8>> {
    let (bt, bv) = (set.total.dim(0), set.total.dim(1));
    let mut payload = Vec::new();
    put_f64s(&mut payload, set.total.data());
    for c in &set.components {
        if c.scores.shape() != [bt, bv] {
            return Err(Error::shape("encode_scores", c.scores.shape(), set.total.shape()));
        }
        put_f64s(&mut payload, c.scores.data());
    }
    let header = ScoresHeader {
        texts: bt,
        videos: bv,
        dtype: "f64".into(),
        components: set
            .components
            .iter()
            .map(|c| ComponentEntry {
                layer: c.layer,
                granularity: c.granularity,
            })
            .collect(),
    };
    container::encode(SCORES_MAGIC, &header, &payload)
}

/// Reads matrices back exactly as written; the stored total is kept as is.
pub fn decode_scores(buf: &[u8]) -> Result<SimilaritySet> {
    let (h, mut r): (ScoresHeader, _) = container::decode(buf, SCORES_MAGIC)?;
    if h.dtype != "f64" {
        return Err(Error::format(8, format!("unsupported scores dtype {:?}", h.dtype)));
    }
    let n = h.texts * h.videos;
    let total = Tensor::new(vec![h.texts, h.videos], r.f64s(n, "total")?)?;
    let mut components = Vec::with_capacity(h.components.len());
    for c in h.components {
        let data = r.f64s(n, "component")?;
        components.push(ScoreComponent {
            layer: c.layer,
            granularity: c.granularity,
            scores: Tensor::new(vec![h.texts, h.videos], data)?,
        });
    }
    r.finish()?;
    Ok(SimilaritySet { components, total })
}

pub fn save_scores(set: &SimilaritySet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_scores(set)?)?;
    Ok(())
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<SimilaritySet> {
    decode_scores(&std::fs::read(path)?)
}

/// One `# name` line per matrix followed by its rows. Values use the
/// shortest representation that parses back to the same `f64`.
pub fn scores_to_text(set: &SimilaritySet) -> String {
    let mut out = String::new();
    let mut dump = |name: &str, t: &Tensor| {
        let _ = writeln!(out, "# {name} {}x{}", t.dim(0), t.dim(1));
        for r in 0..t.dim(0) {
            let row: Vec<String> = t.row(r).iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    };
    dump("total", &set.total);
    for c in &set.components {
        dump(&c.name(), &c.scores);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SimilaritySet {
        let a = Tensor::from_rows(&[vec![0.1, -0.7, 1.0 / 3.0], vec![0.25, 0.5, -1.0]]).unwrap();
        let b = a.map(|x| x * x - 0.2);
        SimilaritySet::from_components(vec![
            ScoreComponent {
                layer: 6,
                granularity: Granularity::SentencePatch,
                scores: a,
            },
            ScoreComponent {
                layer: 12,
                granularity: Granularity::WordPatch,
                scores: b,
            },
        ])
        .unwrap()
    }

    #[test]
    fn binary_roundtrip_is_exact() {
        let s = sample();
        let back = decode_scores(&encode_scores(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn text_dump_parses_back() {
        let s = sample();
        let text = scores_to_text(&s);
        assert!(text.starts_with("# total 2x3\n"));
        assert!(text.contains("# L6.SP 2x3"));
        let first: Vec<f64> = text.lines().nth(1).unwrap().split(' ').map(|v| v.parse().unwrap()).collect();
        assert_eq!(first, s.total.row(0));
    }

    #[test]
    fn truncated_payload_rejected() {
        let buf = encode_scores(&sample()).unwrap();
        assert!(decode_scores(&buf[..buf.len() - 3]).is_err());
    }
}
