mod common;

use common::*;
use hvp_core::eval::{decode_scores, encode_scores, load_scores, save_scores};
use hvp_core::features::{generate_splits, load_dataset, save_dataset, validate_dataset, SyntheticConfig};
use hvp_core::training::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, train, TrainConfig};
use hvp_core::{Error, HvpModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn synthetic_splits_roundtrip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig { num_pairs: 16, ..SyntheticConfig::default() };
    for (i, ds) in generate_splits(&cfg, 8, 4).unwrap().iter().enumerate() {
        assert!(validate_dataset(ds).is_valid());
        let path = dir.path().join(format!("{i}.hvpf"));
        save_dataset(ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(&back, ds);
        let bits = |d: &hvp_core::features::Dataset| -> Vec<u64> {
            d.bundles.iter().flat_map(|b| b.patches.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits()))).collect()
        };
        assert_eq!(bits(&back), bits(ds));
    }
}

#[test]
fn random_dataset_roundtrip_after_quantizing() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut ds = random_dataset(&mut rng, 5, 2, 3, 4, 6, 5);
    quantize(&mut ds);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.hvpf");
    save_dataset(&ds, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(load_dataset("/nonexistent/x.hvpf"), Err(Error::Io(_))));
}

#[test]
fn checkpoint_roundtrip_reproduces_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let ds = random_dataset(&mut rng, 8, 2, 2, 6, 8, 3);
    let cfg = TrainConfig { layers: vec![0, 1], batch_size: 4, epochs: 1, lr: 1e-2, ..TrainConfig::default() };
    let model = train(&ds, &ds, &cfg).unwrap().model;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.hvpc");
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.config, model.config);
    let all: Vec<_> = ds.bundles.iter().collect();
    let a = model.similarities(&all, &all).unwrap();
    let b = back.similarities(&all, &all).unwrap();
    assert_eq!(a, b);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let ds = random_dataset(&mut rng, 2, 1, 2, 4, 8, 2);
    let cfg = TrainConfig { layers: vec![0], ..TrainConfig::default() };
    let model = HvpModel::new(cfg.model_config(&ds).unwrap(), 1).unwrap();
    let buf = encode_checkpoint(&model).unwrap();
    assert!(decode_checkpoint(&buf).is_ok());
    assert!(matches!(decode_checkpoint(&buf[..buf.len() - 1]), Err(Error::Format { .. })));
    let mut extra = buf.clone();
    extra.push(0);
    assert!(matches!(decode_checkpoint(&extra), Err(Error::Format { .. })));
    let mut magic = buf;
    magic[0] = b'X';
    assert!(matches!(decode_checkpoint(&magic), Err(Error::Format { offset: 0, .. })));
}

#[test]
fn checkpoint_dimension_mismatch_names_both_sides() {
    let mut rng = ChaCha8Rng::seed_from_u64(54);
    let small = random_dataset(&mut rng, 2, 1, 2, 4, 8, 2);
    let wide = random_dataset(&mut rng, 2, 1, 2, 4, 12, 2);
    let cfg = TrainConfig { layers: vec![0], ..TrainConfig::default() };
    let model = HvpModel::new(cfg.model_config(&small).unwrap(), 1).unwrap();
    let err = model.config.check_compatible(&wide.header).unwrap_err().to_string();
    assert!(err.contains("D=8") && err.contains("D=12"), "{err}");
}

#[test]
fn exported_scores_reimport_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let ds = random_dataset(&mut rng, 5, 2, 2, 6, 8, 3);
    let cfg = TrainConfig { layers: vec![0, 1], ..TrainConfig::default() };
    let model = HvpModel::new(cfg.model_config(&ds).unwrap(), 2).unwrap();
    let all: Vec<_> = ds.bundles.iter().collect();
    let set = model.similarities(&all, &all).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.hvps");
    save_scores(&set, &path).unwrap();
    let back = load_scores(&path).unwrap();
    assert_eq!(back, set);
    assert_eq!(decode_scores(&encode_scores(&set).unwrap()).unwrap(), set);
}
