//! Sparse latent codes and the TopK selection that produces them.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// An `n`-dimensional vector stored as `(index, value)` pairs with strictly
/// increasing indices. Explicit zeros are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl SparseVector {
    pub fn new(dim: usize, entries: Vec<(u32, f32)>) -> Result<Self> {
        let mut indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            if (i as usize) >= dim {
                return Err(Error::out_of_range("sparse index", i as usize, dim));
            }
            if indices.last().is_some_and(|&last| last >= i) {
                return Err(Error::Invalid("sparse indices must be strictly increasing".into()));
            }
            indices.push(i);
            values.push(v);
        }
        Ok(Self { dim, indices, values })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Every coordinate becomes an active entry, zeros included.
    pub fn from_dense(dense: &[f32]) -> Self {
        Self {
            dim: dense.len(),
            indices: (0..dense.len() as u32).collect(),
            values: dense.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f32)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dot_dense(&self, dense: &[f32]) -> f64 {
        self.iter().map(|(i, v)| f64::from(v) * f64::from(dense[i])).sum()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut a, mut b) = (0, 0);
        let mut acc = 0.0;
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                Ordering::Less => a += 1,
                Ordering::Greater => b += 1,
                Ordering::Equal => {
                    acc += f64::from(self.values[a]) * f64::from(other.values[b]);
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    /// Squared Euclidean distance to another sparse vector.
    pub fn squared_distance(&self, other: &SparseVector) -> f64 {
        (self.norm().powi(2) + other.norm().powi(2) - 2.0 * self.dot(other)).max(0.0)
    }

    /// `self * scale`; used to check scale invariance.
    pub fn scaled(&self, scale: f32) -> Self {
        Self {
            dim: self.dim,
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * scale).collect(),
        }
    }
}

/// Orders positions by value descending, then index ascending.
fn rank_order<T: PartialOrd>(v: &[T], a: usize, b: usize) -> Ordering {
    v[b].partial_cmp(&v[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

/// Positions of the `k` largest values, ties broken toward the lower index,
/// returned in increasing index order.
pub fn topk_indices<T: PartialOrd>(v: &[T], k: usize) -> Result<Vec<usize>> {
    if k > v.len() {
        return Err(Error::Invalid(format!("top-k with k={k} exceeds length {}", v.len())));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < v.len() {
        order.select_nth_unstable_by(k - 1, |&a, &b| rank_order(v, a, b));
    }
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

/// Keeps the `k` largest entries of `v` and zeroes the rest.
pub fn topk<T: PartialOrd + Copy + Default>(v: &[T], k: usize) -> Result<Vec<T>> {
    let keep = topk_indices(v, k)?;
    let mut out = vec![T::default(); v.len()];
    for i in keep {
        out[i] = v[i];
    }
    Ok(out)
}
