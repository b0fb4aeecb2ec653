//! Independent reference implementations and fixtures shared by the
//! integration tests and the acceptance runner. Nothing here calls the
//! library's kernels.

#![allow(dead_code)]

use hvp_core::alignment::WeightMlp;
use hvp_core::features::{Dataset, DatasetHeader, FeatureBundle, Split};
use hvp_core::{ParamStore, Tensor};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn normal(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), normal_vec(rng, shape.iter().product())).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub struct DpcOracle {
    pub cutoff: f64,
    pub rho: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Density peaks written out loop by loop.
pub fn dpc_oracle(rows: &[Vec<f64>], q: f64) -> DpcOracle {
    let m = rows.len();
    let mut dist = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                dist[i][j] = (1.0 - cosine(&rows[i], &rows[j])).max(0.0);
            }
        }
    }
    let mut pairs = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            pairs.push(dist[i][j]);
        }
    }
    pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cutoff = if pairs.is_empty() {
        1e-8
    } else {
        let pos = q * (pairs.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        (pairs[lo] + (pairs[hi] - pairs[lo]) * (pos - lo as f64)).max(1e-8)
    };
    let mut rho = vec![0.0; m];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                let r = dist[i][j] / cutoff;
                rho[i] += (-r * r).exp();
            }
        }
    }
    let mut delta = vec![0.0; m];
    for i in 0..m {
        let mut best = f64::INFINITY;
        let mut found = false;
        for j in 0..m {
            if rho[j] > rho[i] && dist[i][j] < best {
                best = dist[i][j];
                found = true;
            }
        }
        if !found {
            best = 0.0;
            for j in 0..m {
                if dist[i][j] > best {
                    best = dist[i][j];
                }
            }
        }
        delta[i] = best;
    }
    let gamma = (0..m).map(|i| rho[i] * delta[i]).collect();
    DpcOracle {
        cutoff,
        rho,
        delta,
        gamma,
    }
}

/// Token weights from a [`WeightMlp`], evaluated by hand.
pub fn mlp_logit(store: &ParamStore, mlp: &WeightMlp, x: &[f64]) -> f64 {
    let w1 = store.value(mlp.w1);
    let b1 = store.value(mlp.b1);
    let w2 = store.value(mlp.w2);
    let b2 = store.value(mlp.b2);
    let (d, h) = (w1.dim(0), w1.dim(1));
    let mut out = b2.data()[0];
    for j in 0..h {
        let mut a = b1.data()[j];
        for i in 0..d {
            a += x[i] * w1.data()[i * h + j];
        }
        out += a.tanh() * w2.data()[j];
    }
    out
}

/// Word-patch score: the weighted word-to-patch maxima plus the mirrored
/// patch-to-word term, halved.
pub fn wp_oracle(
    store: &ParamStore,
    word_mlp: &WeightMlp,
    patch_mlp: &WeightMlp,
    words: &[Vec<f64>],
    patches: &[Vec<f64>],
) -> f64 {
    let omega = softmax(&words.iter().map(|w| mlp_logit(store, word_mlp, w)).collect::<Vec<_>>());
    let nu = softmax(&patches.iter().map(|p| mlp_logit(store, patch_mlp, p)).collect::<Vec<_>>());
    let mut w2p = 0.0;
    for (i, w) in words.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for p in patches {
            best = best.max(cosine(w, p));
        }
        w2p += omega[i] * best;
    }
    let mut p2w = 0.0;
    for (j, p) in patches.iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        for w in words {
            best = best.max(cosine(p, w));
        }
        p2w += nu[j] * best;
    }
    0.5 * (w2p + p2w)
}

/// Rank of the ground truth after sorting all candidates by descending
/// score, with the ground truth placed after any equal-scoring distractor.
pub fn rank_by_sorting(scores: &[f64], gt: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then_with(|| (a == gt).cmp(&(b == gt)))
    });
    order.iter().position(|&i| i == gt).unwrap() + 1
}

/// `(r1, r5, r10, median, mean)` computed directly from ranks.
pub fn report_oracle(ranks: &[usize]) -> (f64, f64, f64, f64, f64) {
    let n = ranks.len() as f64;
    let mut sorted = ranks.to_vec();
    sorted.sort();
    let below = |k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let median = sorted[(sorted.len() + 1) / 2 - 1] as f64;
    let mean = ranks.iter().map(|&r| r as f64).sum::<f64>() / n;
    (below(1), below(5), below(10), median, mean)
}

/// Symmetric InfoNCE written out with explicit sums.
pub fn info_nce_oracle(s: &[Vec<f64>], scale: f64) -> f64 {
    let b = s.len();
    let mut t2v = 0.0;
    let mut v2t = 0.0;
    for i in 0..b {
        let row: f64 = (0..b).map(|j| (scale * s[i][j]).exp()).sum();
        t2v -= (scale * s[i][i]).exp().ln() - row.ln();
        let col: f64 = (0..b).map(|j| (scale * s[j][i]).exp()).sum();
        v2t -= (scale * s[i][i]).exp().ln() - col.ln();
    }
    (t2v + v2t) / (2.0 * b as f64)
}

/// Random dataset with valid shapes (Gaussian features, zero padding).
pub fn random_dataset(
    rng: &mut impl Rng,
    pairs: usize,
    layers: usize,
    frames: usize,
    patches: usize,
    dim: usize,
    max_words: usize,
) -> Dataset {
    let bundles = (0..pairs)
        .map(|p| {
            let count = rng.random_range(1..=max_words);
            let mut words = normal_vec(rng, max_words * dim);
            for v in &mut words[count * dim..] {
                *v = 0.0;
            }
            FeatureBundle {
                pair_id: p as u32,
                frames: (0..layers).map(|_| normal(rng, &[frames, dim])).collect(),
                patches: (0..layers).map(|_| normal(rng, &[frames, patches, dim])).collect(),
                sentence: normal(rng, &[dim]),
                words: Tensor::new(vec![max_words, dim], words).unwrap(),
                word_count: count,
            }
        })
        .collect();
    Dataset {
        header: DatasetHeader {
            num_pairs: pairs,
            frames,
            patches,
            dim,
            max_words,
            layers: (1..=layers as u32).collect(),
            dtype: "f32".into(),
            split: Split::Train,
        },
        bundles,
    }
}

/// Rounds every feature through `f32`, as stored on disk.
pub fn quantize(ds: &mut Dataset) {
    let q = |t: &mut Tensor| t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
    for b in &mut ds.bundles {
        b.frames.iter_mut().chain(b.patches.iter_mut()).for_each(q);
        q(&mut b.sentence);
        q(&mut b.words);
    }
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let d = *t.shape().last().unwrap();
    t.data().chunks(d).map(|r| r.to_vec()).collect()
}
