//! Fixed-bin histograms of consecutive-token cosine similarity, and the KL
//! divergence between them.

use std::fmt::Write as _;

use crate::cluster::{cosine_similarity, AssignedSequence, ClusterModel};
use crate::error::{Error, Result};
use crate::sparse::SparseVector;

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
    epsilon: f64,
}

impl Histogram {
    /// `bins` equal-width bins spanning `[-1, 1]`.
    pub fn new(bins: usize, epsilon: f64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Invalid("histogram needs at least one bin".into()));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Invalid("histogram smoothing epsilon must be positive".into()));
        }
        let mut edges: Vec<f64> = (0..=bins).map(|i| -1.0 + 2.0 * i as f64 / bins as f64).collect();
        edges[bins] = 1.0;
        Ok(Self {
            edges,
            counts: vec![0; bins],
            epsilon,
        })
    }

    pub fn from_counts(counts: Vec<u64>, epsilon: f64) -> Result<Self> {
        let mut h = Self::new(counts.len(), epsilon)?;
        h.counts = counts;
        Ok(h)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin of `value`, clamped into `[-1, 1]`; 1.0 lands in the last bin.
    pub fn bin_of(&self, value: f64) -> usize {
        let bins = self.bins();
        let v = value.clamp(-1.0, 1.0);
        (((v + 1.0) * bins as f64 / 2.0).floor() as usize).min(bins - 1)
    }

    pub fn add(&mut self, value: f64) {
        let b = self.bin_of(value);
        self.counts[b] += 1;
    }

    /// Smoothed, normalized probabilities `(c/N + eps) / (1 + B eps)`.
    /// An empty histogram normalizes to uniform.
    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total();
        let b = self.bins() as f64;
        self.counts
            .iter()
            .map(|&c| {
                let p = if total == 0 { 0.0 } else { c as f64 / total as f64 };
                (p + self.epsilon) / (1.0 + b * self.epsilon)
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("bin_left\tbin_right\tcount\n");
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(out, "{}\t{}\t{}", self.edges[i], self.edges[i + 1], c).unwrap();
        }
        out
    }
}

/// `KL(P || Q)` over smoothed bin probabilities.
pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    if p.edges != q.edges {
        return Err(Error::Invalid("histograms have different binning".into()));
    }
    let pp = p.probabilities();
    let qq = q.probabilities();
    let kl: f64 = pp.iter().zip(&qq).map(|(&a, &b)| a * (a / b).ln()).sum();
    Ok(kl.max(0.0))
}

pub fn similarity_histogram(values: impl IntoIterator<Item = f64>, bins: usize, epsilon: f64) -> Result<Histogram> {
    let mut h = Histogram::new(bins, epsilon)?;
    for v in values {
        h.add(v);
    }
    if h.total() == 0 {
        return Err(Error::Empty("no consecutive token pairs".into()));
    }
    Ok(h)
}

/// Pools cosine similarity of every consecutive pair of SAE codes.
pub fn consecutive_similarity_distribution(sequences: &[&[SparseVector]], bins: usize, epsilon: f64) -> Result<Histogram> {
    let mut sims = Vec::new();
    for seq in sequences {
        for w in seq.windows(2) {
            sims.push(cosine_similarity(&w[0], &w[1])?);
        }
    }
    similarity_histogram(sims, bins, epsilon)
}

/// Same pooling, with each token represented by its assigned centroid.
pub fn centroid_similarity_distribution(
    model: &ClusterModel,
    sequences: &[&AssignedSequence],
    bins: usize,
    epsilon: f64,
) -> Result<Histogram> {
    let k = model.num_clusters();
    let mut sims = Vec::new();
    for seq in sequences {
        for w in seq.clusters.windows(2) {
            let (a, b) = (w[0] as usize, w[1] as usize);
            if a >= k || b >= k {
                return Err(Error::out_of_range("cluster id", a.max(b), k));
            }
            sims.push(centroid_cosine(model.centroid(a), model.centroid(b)));
        }
    }
    similarity_histogram(sims, bins, epsilon)
}

fn centroid_cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}
