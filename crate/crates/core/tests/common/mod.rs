//! Independent reference implementations used by the integration and
//! acceptance tests. None of these call into the library's numeric code.

#![allow(dead_code)]

use rand::Rng;
use tracegraph::corpus::{Dataset, ManifestEntry, SequenceManifest};
use tracegraph::sae::{SaeModel, SaeShape};
use tracegraph::seed;
use tracegraph::sparse::SparseVector;
use tracegraph::AssignedSequence;

/// SAE parameters widened to f64, with the loss computed by scalar loops.
#[derive(Debug, Clone)]
pub struct F64Sae {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub w_enc: Vec<f64>,
    pub b_enc: Vec<f64>,
    pub w_dec: Vec<f64>,
    pub b_pre: Vec<f64>,
}

impl F64Sae {
    pub fn from_model(m: &SaeModel) -> Self {
        let s = m.shape();
        let wide = |v: &[f32]| v.iter().map(|&x| f64::from(x)).collect::<Vec<f64>>();
        Self {
            d: s.input_dim,
            n: s.latent_dim,
            k: s.top_k,
            w_enc: wide(&m.w_enc),
            b_enc: wide(&m.b_enc),
            w_dec: wide(&m.w_dec),
            b_pre: wide(&m.b_pre),
        }
    }

    /// Indices of the `k` largest pre-activations, larger value first and
    /// lower index first among equals.
    pub fn selected(&self, x: &[f32]) -> Vec<usize> {
        let u = self.preactivation(x);
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| u[b].partial_cmp(&u[a]).unwrap().then(a.cmp(&b)));
        order.truncate(self.k);
        order
    }

    pub fn preactivation(&self, x: &[f32]) -> Vec<f64> {
        let mut u = vec![0.0; self.n];
        for (j, uj) in u.iter_mut().enumerate() {
            let mut acc = self.b_enc[j];
            for i in 0..self.d {
                acc += self.w_enc[j * self.d + i] * (f64::from(x[i]) - self.b_pre[i]);
            }
            *uj = acc;
        }
        u
    }

    /// Gap between the k-th and (k+1)-th largest pre-activation; infinite
    /// when every latent is selected.
    pub fn selection_margin(&self, x: &[f32]) -> f64 {
        if self.k == self.n {
            return f64::INFINITY;
        }
        let mut u = self.preactivation(x);
        u.sort_by(|a, b| b.partial_cmp(a).unwrap());
        u[self.k - 1] - u[self.k]
    }

    pub fn reconstruct(&self, x: &[f32]) -> Vec<f64> {
        let u = self.preactivation(x);
        let mut out = self.b_pre.clone();
        for j in self.selected(x) {
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.w_dec[i * self.n + j] * u[j];
            }
        }
        out
    }

    pub fn loss(&self, batch: &[&[f32]]) -> f64 {
        let mut total = 0.0;
        for x in batch {
            let r = self.reconstruct(x);
            for i in 0..self.d {
                let e = f64::from(x[i]) - r[i];
                total += e * e;
            }
        }
        total / batch.len() as f64
    }

    pub fn tensor_mut(&mut self, which: usize) -> &mut Vec<f64> {
        match which {
            0 => &mut self.w_enc,
            1 => &mut self.b_enc,
            2 => &mut self.w_dec,
            _ => &mut self.b_pre,
        }
    }
}

pub const TENSOR_NAMES: [&str; 4] = ["W_enc", "b_enc", "W_dec", "b_pre"];

/// Central-difference gradient of the f64 loss for every parameter of
/// tensor `which`.
pub fn numeric_gradient(base: &F64Sae, which: usize, batch: &[&[f32]], h: f64) -> Vec<f64> {
    let len = base.clone().tensor_mut(which).len();
    (0..len)
        .map(|p| {
            let mut plus = base.clone();
            plus.tensor_mut(which)[p] += h;
            let mut minus = base.clone();
            minus.tensor_mut(which)[p] -= h;
            (plus.loss(batch) - minus.loss(batch)) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// A random model with entries drawn uniformly from `[-1, 1]`.
pub fn random_model(shape: SaeShape, seed_value: u64) -> SaeModel {
    let mut rng = seed::rng(seed_value);
    let (d, n) = (shape.input_dim, shape.latent_dim);
    let mut draw = |len: usize| -> Vec<f32> { (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect() };
    let w_enc = draw(n * d);
    let b_enc = draw(n);
    let w_dec = draw(d * n);
    let b_pre = draw(d);
    SaeModel::from_parts(shape, w_enc, b_enc, w_dec, b_pre).unwrap()
}

pub fn random_rows(count: usize, dim: usize, seed_value: u64) -> Vec<Vec<f32>> {
    let mut rng = seed::rng(seed_value);
    (0..count).map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect()
}

/// Cosine distance straight from the definition, on dense copies.
pub fn dense_cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    let na: f64 = a.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

/// Minimum accumulated cost over every monotone warping path, found by
/// exhaustive enumeration. Costs are accumulated from the start of the
/// path, one step at a time.
pub fn brute_force_dtw(n: usize, m: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    fn walk(i: usize, j: usize, acc: f64, n: usize, m: usize, cost: &dyn Fn(usize, usize) -> f64, best: &mut f64) {
        if i == n - 1 && j == m - 1 {
            *best = best.min(acc);
            return;
        }
        for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < n && nj < m {
                walk(ni, nj, cost(ni, nj) + acc, n, m, cost, best);
            }
        }
    }
    let mut best = f64::INFINITY;
    walk(0, 0, cost(0, 0), n, m, cost, &mut best);
    best
}

pub fn random_sparse(dim: usize, nnz: usize, rng: &mut impl Rng) -> SparseVector {
    let mut idx = rand::seq::index::sample(rng, dim, nnz).into_vec();
    idx.sort_unstable();
    let entries = idx.into_iter().map(|i| (i as u32, rng.random_range(-1.0f32..1.0))).collect();
    SparseVector::new(dim, entries).unwrap()
}

pub fn random_sparse_sequence(len: usize, dim: usize, nnz: usize, rng: &mut impl Rng) -> Vec<SparseVector> {
    (0..len).map(|_| random_sparse(dim, nnz, rng)).collect()
}

/// Shannon entropy (nats) of the pooled cluster frequencies.
pub fn pooled_entropy(sequences: &[Vec<u32>]) -> f64 {
    let mut counts = std::collections::BTreeMap::new();
    for s in sequences {
        for &c in s {
            *counts.entry(c).or_insert(0u64) += 1;
        }
    }
    let total: u64 = counts.values().sum();
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.ln()
        })
        .sum()
}

/// Manifest plus assignments for the given cluster paths, tagged in order.
pub fn tagged_corpus(paths: &[(Dataset, Vec<u32>)]) -> (SequenceManifest, Vec<AssignedSequence>) {
    let mut entries = Vec::new();
    let mut assigned = Vec::new();
    let mut start = 0u64;
    for (i, (dataset, clusters)) in paths.iter().enumerate() {
        let id = format!("s{i:05}");
        entries.push(ManifestEntry {
            id: id.clone(),
            dataset: *dataset,
            start,
            len: clusters.len() as u64,
            label: None,
        });
        start += clusters.len() as u64;
        assigned.push(AssignedSequence {
            id,
            clusters: clusters.clone(),
        });
    }
    (SequenceManifest::new(entries).unwrap(), assigned)
}

/// Direct transition count over reference paths.
pub fn count_transitions(paths: &[(Dataset, Vec<u32>)], i: u32, j: u32) -> u64 {
    paths
        .iter()
        .filter(|(d, _)| *d == Dataset::Reference)
        .map(|(_, p)| p.windows(2).filter(|w| w[0] == i && w[1] == j).count() as u64)
        .sum()
}
