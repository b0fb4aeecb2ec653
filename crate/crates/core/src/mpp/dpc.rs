//! Density-peak center selection over one frame's tokens.
//!
//! Distances are cosine distances `1 - cos`. The cutoff `d_c` is the
//! `q`-quantile (linear interpolation) of the off-diagonal distances,
//! floored at `1e-8`. Density uses a Gaussian kernel,
//! `rho_i = sum_{j != i} exp(-(d_ij / d_c)^2)`; separation `delta_i` is the
//! distance to the nearest strictly denser token, or the largest distance
//! from `i` when no token is denser. Centers are the top-`k` tokens by
//! `gamma = rho * delta`, ties to the lower index.

use crate::error::{Error, Result};
use crate::tensor::{ops, Tensor};

pub const CUTOFF_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityPeaks {
    pub cutoff: f64,
    pub rho: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DpcSelection {
    /// Token index of each center, in descending `gamma` order.
    pub centers: Vec<usize>,
    /// For each token, the position in `centers` of its cluster.
    pub assignment: Vec<usize>,
}

/// Pairwise cosine distances of the rows of a `[M, D]` tensor.
pub fn cosine_distances(tokens: &Tensor) -> Result<Vec<Vec<f64>>> {
    if tokens.rank() != 2 {
        return Err(Error::InvalidArgument(format!(
            "dpc: expected [M, D] tokens, got {:?}",
            tokens.shape()
        )));
    }
    let (unit, _) = ops::l2_normalize(tokens)?;
    let m = tokens.dim(0);
    let mut d = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let cos: f64 = unit.row(i).iter().zip(unit.row(j)).map(|(a, b)| a * b).sum();
            let v = (1.0 - cos).max(0.0);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn density_peaks(tokens: &Tensor, q: f64) -> Result<DensityPeaks> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("density quantile must lie in (0, 1), got {q}")));
    }
    let d = cosine_distances(tokens)?;
    let m = d.len();
    let mut off: Vec<f64> = (0..m).flat_map(|i| d[i][i + 1..].to_vec()).collect();
    off.sort_by(f64::total_cmp);
    let cutoff = if off.is_empty() {
        CUTOFF_FLOOR
    } else {
        quantile_sorted(&off, q).max(CUTOFF_FLOOR)
    };

    let rho: Vec<f64> = (0..m)
        .map(|i| {
            (0..m)
                .filter(|&j| j != i)
                .map(|j| (-(d[i][j] / cutoff).powi(2)).exp())
                .sum()
        })
        .collect();
    let delta: Vec<f64> = (0..m)
        .map(|i| {
            let denser = (0..m).filter(|&j| rho[j] > rho[i]).map(|j| d[i][j]);
            match denser.reduce(f64::min) {
                Some(v) => v,
                None => d[i].iter().cloned().fold(0.0, f64::max),
            }
        })
        .collect();
    let gamma = rho.iter().zip(&delta).map(|(r, s)| r * s).collect();
    Ok(DensityPeaks {
        cutoff,
        rho,
        delta,
        gamma,
    })
}

/// Picks `k` centers and assigns every token to its nearest center.
pub fn dpc_select(tokens: &Tensor, k: usize, q: f64) -> Result<DpcSelection> {
    let m = tokens.dim(0);
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!("dpc: k={k} outside 1..={m}")));
    }
    let peaks = density_peaks(tokens, q)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| peaks.gamma[b].total_cmp(&peaks.gamma[a]).then(a.cmp(&b)));
    let centers: Vec<usize> = order[..k].to_vec();

    let d = cosine_distances(tokens)?;
    let assignment = (0..m)
        .map(|i| {
            if let Some(own) = centers.iter().position(|&c| c == i) {
                return own;
            }
            let mut best = 0;
            for (ci, &c) in centers.iter().enumerate().skip(1) {
                if d[i][c] < d[i][centers[best]] {
                    best = ci;
                }
            }
            best
        })
        .collect();
    Ok(DpcSelection { centers, assignment })
}
