mod common;

use common::*;
use hvp_core::autograd::{Graph, Var};
use hvp_core::gradcheck::finite_diff_check;
use hvp_core::training::{info_nce, TrainConfig};
use hvp_core::{HvpModel, ParamId, ParamStore, Result, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-4;

/// Contracts `out` with a fixed random tensor so every output entry matters.
fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = normal(&mut rng, g.shape(out));
    let r = g.constant(r);
    let p = g.mul(out, r)?;
    g.sum_all(p)
}

fn check(store: &ParamStore, ids: &[ParamId], f: impl FnMut(&mut Graph, &ParamStore) -> Result<Var>) {
    let report = finite_diff_check(store, ids, f, STEP, TOL).unwrap();
    assert!(report.passed(), "{:?}", report.failures());
}

fn store_with(rng: &mut ChaCha8Rng, shapes: &[&[usize]]) -> (ParamStore, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(hvp_core::Parameter::new(format!("p{i}"), normal(rng, s), true)))
        .collect();
    (store, ids)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn matmul_and_bmm(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
        let (store, ids) = store_with(&mut rng, &[&[a, b], &[b, c], &[2, a, b], &[2, b, c]]);
        check(&store, &ids, |g, s| {
            let (x, y, u, v) = (g.param(s, ids[0]), g.param(s, ids[1]), g.param(s, ids[2]), g.param(s, ids[3]));
            let m = g.matmul(x, y)?;
            let bm = g.bmm(u, v)?;
            let l1 = project(g, m, seed)?;
            let l2 = project(g, bm, seed + 1)?;
            g.add(l1, l2)
        });
    }

    #[test]
    fn elementwise_and_layout(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, ids) = store_with(&mut rng, &[&[2, 3, 2], &[2, 3, 2], &[2], &[1]]);
        check(&store, &ids, |g, s| {
            let (x, y, bias, sc) = (g.param(s, ids[0]), g.param(s, ids[1]), g.param(s, ids[2]), g.param(s, ids[3]));
            let a = g.add(x, y)?;
            let b = g.sub(x, y)?;
            let c = g.mul(a, b)?;
            let c = g.permute(c, &[2, 0, 1])?;
            let c = g.reshape(c, &[2, 6])?;
            let c = g.transpose(c)?;
            let c = g.add_bias(c, bias)?;
            let c = g.scale_by(c, sc)?;
            let c = g.scale(c, 0.3)?;
            let t = g.tanh(c)?;
            let e = g.exp(t)?;
            let l = g.log(e)?;
            let z = g.add(l, e)?;
            project(g, z, seed)
        });
    }

    #[test]
    fn normalizations(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, ids) = store_with(&mut rng, &[&[3, 5], &[5], &[5]]);
        let mask = Tensor::new(vec![3, 5], (0..15).map(|i| if i % 5 == 4 && i > 5 { f64::NEG_INFINITY } else { 0.0 }).collect()).unwrap();
        check(&store, &ids, |g, s| {
            let (x, gain, bias) = (g.param(s, ids[0]), g.param(s, ids[1]), g.param(s, ids[2]));
            let sm = g.softmax(x, Some(&mask))?;
            let n = g.l2_normalize(x)?;
            let ln = g.layer_norm(x, gain, bias)?;
            let a = project(g, sm, seed)?;
            let b = project(g, n, seed + 1)?;
            let c = project(g, ln, seed + 2)?;
            let ab = g.add(a, b)?;
            g.add(ab, c)
        });
    }

    #[test]
    fn reductions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, ids) = store_with(&mut rng, &[&[3, 4, 2], &[4, 4]]);
        let valid: Vec<bool> = (0..12).map(|i| i % 4 != 3 || i < 4).collect();
        check(&store, &ids, |g, s| {
            let (x, sq) = (g.param(s, ids[0]), g.param(s, ids[1]));
            let parts = [
                g.sum(x, 1)?,
                g.mean(x, 2)?,
                g.max(x, 1)?,
                g.max_masked(x, 1, Some(&valid[..]))?,
                g.logsumexp(x, 0)?,
                g.diagonal(sq)?,
                g.gather_rows(sq, &[3, 0, 3])?,
            ];
            let mut total = g.sum_all(x)?;
            for (i, p) in parts.into_iter().enumerate() {
                let l = project(g, p, seed + i as u64)?;
                total = g.add(total, l)?;
            }
            let e = g.exp(sq)?;
            let cl = g.clamp_max(e, 1.5)?;
            let l = project(g, cl, seed + 99)?;
            g.add(total, l)
        });
    }

    #[test]
    fn cluster_merge(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, ids) = store_with(&mut rng, &[&[2, 5, 3], &[2, 5]]);
        let assignment = vec![0, 1, 0, 2, 1, 2, 2, 0, 1, 1];
        check(&store, &ids, |g, s| {
            let (x, w) = (g.param(s, ids[0]), g.param(s, ids[1]));
            let w = g.softmax(w, None)?;
            let m = g.cluster_merge(x, w, &assignment, 3)?;
            project(g, m, seed)
        });
    }

    #[test]
    fn info_nce_loss(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = rng.random_range(2..6);
        let (store, ids) = store_with(&mut rng, &[&[b, b], &[1]]);
        check(&store, &ids, |g, s| {
            let (x, t) = (g.param(s, ids[0]), g.param(s, ids[1]));
            let sc = g.exp(t)?;
            info_nce(g, x, sc)
        });
    }
}

fn toy_model(seed: u64, cfg: TrainConfig) -> (HvpModel, hvp_core::features::Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ds = random_dataset(&mut rng, 2, cfg.layers.len(), 2, 6, 8, 3);
    let mut model = HvpModel::new(cfg.model_config(&ds).unwrap(), seed).unwrap();
    // Move temperatures off the clamp and norms off their identity values.
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let p = model.store.get_mut(id);
        if p.name.starts_with("temp.") {
            p.value = Tensor::scalar(rng.random_range(0.0..2.0));
        } else if p.name.contains(".norm.") || p.name.ends_with(".b1") {
            let n = p.value.len();
            p.value = Tensor::new(p.value.shape().to_vec(), normal_vec(&mut rng, n).iter().map(|v| 0.3 * v + if p.name.ends_with("gain") { 1.0 } else { 0.0 }).collect()).unwrap();
        }
    }
    (model, ds)
}

#[test]
fn every_model_parameter_passes_gradcheck() {
    let cfg = TrainConfig { layers: vec![0], attn_out_std: 0.3, ..TrainConfig::default() };
    let (model, ds) = toy_model(21, cfg);
    assert_eq!(model.concepts_per_frame(6), 2);
    let batch: Vec<_> = ds.bundles.iter().collect();
    let ids: Vec<_> = model.store.ids().collect();
    check(&model.store, &ids, |g, s| model.loss_with(g, s, &batch));
}

#[test]
fn multi_head_shared_stack_per_layer_mlps_pass_gradcheck() {
    let cfg = TrainConfig {
        layers: vec![0, 1],
        heads: 2,
        share_mpp: true,
        per_layer_mlp: true,
        attn_out_std: 0.3,
        ..TrainConfig::default()
    };
    let (model, ds) = toy_model(22, cfg);
    let batch: Vec<_> = ds.bundles.iter().collect();
    let ids: Vec<_> = model.store.ids().collect();
    check(&model.store, &ids, |g, s| model.loss_with(g, s, &batch));
}

#[test]
fn total_gradient_is_sum_of_component_gradients() {
    let cfg = TrainConfig { layers: vec![0, 1], attn_out_std: 0.3, ..TrainConfig::default() };
    let (model, ds) = toy_model(23, cfg);
    let batch: Vec<_> = ds.bundles.iter().collect();

    let mut whole = model.store.clone();
    whole.zero_grads();
    let mut g = Graph::new();
    let l = model.loss_with(&mut g, &model.store, &batch).unwrap();
    g.backward(l, &mut whole).unwrap();

    let mut summed = model.store.clone();
    summed.zero_grads();
    let count = {
        let mut g = Graph::new();
        model.forward(&mut g, &batch, &batch).unwrap().components.len()
    };
    for c in 0..count {
        let mut part = model.store.clone();
        part.zero_grads();
        let mut g = Graph::new();
        let sims = model.forward(&mut g, &batch, &batch).unwrap();
        let (_, gran, s) = sims.components[c];
        let scale = model.temperatures[gran.index()].scale(&mut g, &model.store).unwrap();
        let loss = info_nce(&mut g, s, scale).unwrap();
        g.backward(loss, &mut part).unwrap();
        for id in part.ids() {
            let add = part.grad(id).clone();
            let p = summed.get_mut(id);
            p.grad.data_mut().iter_mut().zip(add.data()).for_each(|(a, b)| *a += b);
        }
    }
    for id in whole.ids() {
        let diff = whole.grad(id).max_abs_diff(summed.grad(id));
        assert!(diff <= 1e-10, "{}: {diff}", whole.get(id).name);
    }
}
