//! Dynamic time warping over sequences of sparse codes.

use serde::{Deserialize, Serialize};

use crate::cluster::cosine_distance;
use crate::error::{Error, Result};
use crate::seed;
use crate::sparse::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtwCost {
    #[default]
    Cosine,
    Euclidean,
}

impl DtwCost {
    pub fn cost(self, a: &SparseVector, b: &SparseVector) -> Result<f64> {
        match self {
            DtwCost::Cosine => cosine_distance(a, b),
            DtwCost::Euclidean => {
                if a.dim() != b.dim() {
                    return Err(Error::mismatch("vector dim", a.dim(), b.dim()));
                }
                Ok(a.squared_distance(b).sqrt())
            }
        }
    }
}

/// Accumulated cost of the optimal monotone alignment of an `n x m` grid
/// with match/insert/delete moves and no window.
pub fn dtw_by<F>(n: usize, m: usize, mut cost: F) -> Result<f64>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    if n == 0 || m == 0 {
        return Err(Error::Empty("DTW needs two non-empty sequences".into()));
    }
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for i in 0..n {
        for j in 0..m {
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j - 1].min(prev[j]).min(cur[j - 1]),
            };
            cur[j] = cost(i, j)? + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

pub fn dtw_distance(a: &[SparseVector], b: &[SparseVector]) -> Result<f64> {
    dtw_distance_with(a, b, DtwCost::Cosine)
}

pub fn dtw_distance_with(a: &[SparseVector], b: &[SparseVector], cost: DtwCost) -> Result<f64> {
    dtw_by(a.len(), b.len(), |i, j| cost.cost(&a[i], &b[j]))
}

/// Minimum DTW distance from `g` to any of `originals`, optionally over a
/// seeded uniform subsample of at most `subsample` originals.
pub fn min_dtw_to_set(
    g: &[SparseVector],
    originals: &[Vec<SparseVector>],
    subsample: Option<usize>,
    seed_value: u64,
    cost: DtwCost,
) -> Result<f64> {
    if originals.is_empty() {
        return Err(Error::Empty("no original sequences to compare against".into()));
    }
    let picked: Vec<usize> = match subsample {
        Some(0) => return Err(Error::Invalid("DTW subsample size must be positive".into())),
        Some(s) if s < originals.len() => {
            let mut rng = seed::rng(seed::derive(seed_value, "dtw-subsample"));
            let mut idx = rand::seq::index::sample(&mut rng, originals.len(), s).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..originals.len()).collect(),
    };
    let mut best = f64::INFINITY;
    for i in picked {
        best = best.min(dtw_distance_with(g, &originals[i], cost)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: &[&[f32]]) -> Vec<SparseVector> {
        rows.iter().map(|r| SparseVector::from_dense(r)).collect()
    }

    #[test]
    fn identity_and_repetition() {
        let a = seq(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
        let u = seq(&[&[0.3, 0.7]]);
        let uu = seq(&[&[0.3, 0.7], &[0.3, 0.7]]);
        assert!(dtw_distance(&u, &uu).unwrap() < 1e-15);
    }

    #[test]
    fn empty_sequences_rejected() {
        assert!(dtw_distance(&[], &seq(&[&[1.0]])).is_err());
        assert!(min_dtw_to_set(&seq(&[&[1.0]]), &[], None, 0, DtwCost::Cosine).is_err());
    }

    #[test]
    fn euclidean_cost() {
        let a = seq(&[&[0.0, 0.0]]);
        let b = seq(&[&[3.0, 4.0]]);
        assert!((dtw_distance_with(&a, &b, DtwCost::Euclidean).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn min_over_set() {
        let g = seq(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let others = vec![seq(&[&[0.0, 1.0]]), g.clone()];
        assert_eq!(min_dtw_to_set(&g, &others, None, 0, DtwCost::Cosine).unwrap(), 0.0);
        let single = vec![seq(&[&[0.0, 1.0]])];
        assert_eq!(
            min_dtw_to_set(&g, &single, None, 0, DtwCost::Cosine).unwrap(),
            dtw_distance(&g, &single[0]).unwrap()
        );
    }
}
