//! The HVPF feature-bundle file.
//!
//! After the container preamble, records follow in `pair_id` order. Each
//! record holds, for every header layer, `F_l` (`N*D` f32) then `P_l`
//! (`N*M*D` f32); then `T_s` (`D`), `T_w` (`L_w_max*D`) and `N_w` as `u32`.

use std::path::Path;

use super::{validate_dataset, Dataset, DatasetHeader, FeatureBundle};
use crate::container::{self, put_f32s};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HVPF";

fn record_bytes(h: &DatasetHeader) -> usize {
    let per_layer = h.frames * h.dim + h.frames * h.patches * h.dim;
    4 * (h.layers.len() * per_layer + h.dim + h.max_words * h.dim) + 4
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let report = validate_dataset(ds);
    if !report.is_valid() {
        return Err(Error::InvalidArgument(format!(
            "refusing to write invalid dataset: {}",
            report.violations[0]
        )));
    }
    let h = &ds.header;
    let mut payload = Vec::with_capacity(ds.len() * record_bytes(h));
    let mut order: Vec<&FeatureBundle> = ds.bundles.iter().collect();
    order.sort_by_key(|b| b.pair_id);
    for b in order {
        for (f, p) in b.frames.iter().zip(&b.patches) {
            put_f32s(&mut payload, f.data());
            put_f32s(&mut payload, p.data());
        }
        put_f32s(&mut payload, b.sentence.data());
        put_f32s(&mut payload, b.words.data());
        payload.extend_from_slice(&(b.word_count as u32).to_le_bytes());
    }
    container::encode(MAGIC, h, &payload)
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset> {
    let (header, mut r): (DatasetHeader, _) = container::decode(buf, MAGIC)?;
    let h = &header;
    if h.dtype != "f32" {
        return Err(Error::format(12, format!("unsupported dtype `{}`", h.dtype)));
    }
    if [h.frames, h.patches, h.dim, h.max_words].contains(&0) || h.layers.is_empty() {
        return Err(Error::format(12, "header dimensions must be positive"));
    }
    let expected = r.offset() as usize + h.num_pairs * record_bytes(h);
    if buf.len() != expected {
        return Err(Error::format(
            buf.len().min(expected) as u64,
            format!(
                "file is {} bytes but header (num_pairs={}, N={}, M={}, D={}, L_w_max={}, {} layers) implies {} bytes",
                buf.len(),
                h.num_pairs,
                h.frames,
                h.patches,
                h.dim,
                h.max_words,
                h.layers.len(),
                expected
            ),
        ));
    }

    let (n, m, d, lw) = (h.frames, h.patches, h.dim, h.max_words);
    let mut bundles = Vec::with_capacity(h.num_pairs);
    for pair in 0..h.num_pairs {
        let mut frames = Vec::with_capacity(h.layers.len());
        let mut patches = Vec::with_capacity(h.layers.len());
        for _ in &h.layers {
            frames.push(Tensor::new(vec![n, d], r.f32s(n * d, "frame features")?)?);
            patches.push(Tensor::new(vec![n, m, d], r.f32s(n * m * d, "patch features")?)?);
        }
        let sentence = Tensor::new(vec![d], r.f32s(d, "sentence feature")?)?;
        let words = Tensor::new(vec![lw, d], r.f32s(lw * d, "word features")?)?;
        let at = r.offset();
        let word_count = r.u32("word count")? as usize;
        if word_count == 0 || word_count > lw {
            return Err(Error::format(
                at,
                format!("pair {pair}: word count {word_count} outside 1..={lw}"),
            ));
        }
        bundles.push(FeatureBundle {
            pair_id: pair as u32,
            frames,
            patches,
            sentence,
            words,
            word_count,
        });
    }
    r.finish()?;
    Ok(Dataset { header, bundles })
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)?)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let buf = std::fs::read(path)?;
    decode_dataset(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{generate_synthetic, SyntheticConfig};

    fn tiny() -> Dataset {
        generate_synthetic(&SyntheticConfig {
            num_pairs: 3,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let ds = tiny();
        let back = decode_dataset(&encode_dataset(&ds).unwrap()).unwrap();
        assert_eq!(back, ds);
        let bits = |d: &Dataset| -> Vec<u64> {
            d.bundles
                .iter()
                .flat_map(|b| b.patches[2].data().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(bits(&back), bits(&ds));
    }

    #[test]
    fn truncation_reports_offset() {
        let mut buf = encode_dataset(&tiny()).unwrap();
        buf.pop();
        let err = decode_dataset(&buf).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("byte offset"), "{err}");
    }

    #[test]
    fn header_claiming_more_patches_than_records_hold() {
        // Records written with M=15, header rewritten to claim M=16.
        let ds = generate_synthetic(&SyntheticConfig {
            num_pairs: 2,
            patches: 15,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let buf = encode_dataset(&ds).unwrap();
        let hlen = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let mut header: DatasetHeader = serde_json::from_slice(&buf[12..12 + hlen]).unwrap();
        header.patches = 16;
        let forged = container::encode(MAGIC, &header, &buf[12 + hlen..]).unwrap();
        let err = decode_dataset(&forged).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("M=16") && msg.contains("byte offset"), "{msg}");
    }

    #[test]
    fn bad_magic_and_version() {
        let mut buf = encode_dataset(&tiny()).unwrap();
        buf[0] = b'X';
        assert!(decode_dataset(&buf).unwrap_err().to_string().contains("offset 0"));
        let mut buf = encode_dataset(&tiny()).unwrap();
        buf[4] = 2;
        assert!(decode_dataset(&buf).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn word_count_out_of_range_is_rejected() {
        let mut buf = encode_dataset(&tiny()).unwrap();
        let n = buf.len();
        buf[n - 4..].copy_from_slice(&0u32.to_le_bytes());
        let err = decode_dataset(&buf).unwrap_err();
        assert!(err.to_string().contains("word count 0"), "{err}");
    }
}
