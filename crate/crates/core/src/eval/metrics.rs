//! Ranks and recall metrics from a `[Bt, Bv]` score matrix whose matching
//! pairs lie on the diagonal.
//!
//! Ranks are 1-based and pessimistic: a ground-truth item ranks behind every
//! distractor whose score is greater than or equal to its own.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "t2v")]
    TextToVideo,
    #[serde(rename = "v2t")]
    VideoToText,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Self::TextToVideo, Self::VideoToText];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TextToVideo => "t2v",
            Self::VideoToText => "v2t",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Rank of each query's ground truth.
pub fn ranks(scores: &Tensor, dir: Direction) -> Result<Vec<usize>> {
    let n = match scores.shape() {
        &[a, b] if a == b && a > 0 => a,
        s => {
            return Err(Error::InvalidArgument(format!(
                "ranking needs a non-empty square score matrix, got {s:?}"
            )))
        }
    };
    if !scores.all_finite() {
        return Err(Error::NonFinite { op: "ranks" });
    }
    let at = |q: usize, c: usize| match dir {
        Direction::TextToVideo => scores.at(q, c),
        Direction::VideoToText => scores.at(c, q),
    };
    Ok((0..n)
        .map(|q| {
            let gt = at(q, q);
            1 + (0..n).filter(|&c| c != q && at(q, c) >= gt).count()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub direction: Direction,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    /// Median rank; the lower middle element for an even count.
    pub mdr: f64,
    pub mnr: f64,
    pub queries: usize,
}

impl RetrievalReport {
    pub fn from_ranks(direction: Direction, ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::InvalidArgument("no ranks to summarize".into()));
        }
        let n = ranks.len() as f64;
        let recall = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        let mut sorted = ranks.to_vec();
        sorted.sort_unstable();
        Ok(Self {
            direction,
            r1: recall(1),
            r5: recall(5),
            r10: recall(10),
            mdr: sorted[(sorted.len() - 1) / 2] as f64,
            mnr: ranks.iter().sum::<usize>() as f64 / n,
            queries: ranks.len(),
        })
    }

    pub fn from_scores(scores: &Tensor, direction: Direction) -> Result<Self> {
        Self::from_ranks(direction, &ranks(scores, direction)?)
    }
}

/// Both directions.
pub fn evaluate(scores: &Tensor) -> Result<[RetrievalReport; 2]> {
    Ok([
        RetrievalReport::from_scores(scores, Direction::TextToVideo)?,
        RetrievalReport::from_scores(scores, Direction::VideoToText)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_perfect() {
        let [t, v] = evaluate(&Tensor::eye(5)).unwrap();
        for r in [t, v] {
            assert_eq!((r.r1, r.r5, r.mdr, r.mnr), (1.0, 1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn constant_scores_rank_last() {
        let r = ranks(&Tensor::full(vec![5, 5], 0.2), Direction::TextToVideo).unwrap();
        assert_eq!(r, vec![5; 5]);
    }

    #[test]
    fn directions_read_rows_and_columns() {
        // text 0 prefers video 1; video 0 is still best matched by text 0
        let s = Tensor::from_rows(&[vec![0.5, 0.9], vec![0.1, 0.2]]).unwrap();
        assert_eq!(ranks(&s, Direction::TextToVideo).unwrap(), vec![2, 1]);
        assert_eq!(ranks(&s, Direction::VideoToText).unwrap(), vec![1, 2]);
    }

    #[test]
    fn median_takes_lower_middle() {
        let r = RetrievalReport::from_ranks(Direction::TextToVideo, &[1, 2, 7, 9]).unwrap();
        assert_eq!(r.mdr, 2.0);
        assert_eq!(r.mnr, 4.75);
        assert_eq!(r.r5, 0.5);
    }
}
