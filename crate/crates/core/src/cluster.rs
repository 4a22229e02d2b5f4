//! Spherical k-means over sparse latent codes.
//!
//! Distances are cosine distances, centroids live on the unit sphere, and
//! each centroid update is the normalized mean of its members' unit
//! directions, which is the minimizer of summed cosine distance for a
//! fixed assignment. Seeding is k-means++ (D^2 sampling on cosine
//! distance).

use std::collections::HashMap;
use std::path::Path;

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::corpus::SequenceManifest;
use crate::error::{Error, Result};
use crate::seed;
use crate::sparse::SparseVector;

const KMC_MAGIC: &[u8; 4] = b"KMC1";
const KMC_VERSION: u32 = 1;

/// Tolerance on centroid norms after rounding to the stored `f32` width.
pub const CENTROID_NORM_TOL: f64 = 1e-6;

/// Anything a sparse code can be compared against.
pub trait CosineTarget {
    fn dim(&self) -> usize;
    fn norm_sq(&self) -> f64;
    fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
    fn dot_sparse(&self, a: &SparseVector) -> f64;
}

impl CosineTarget for SparseVector {
    fn dim(&self) -> usize {
        SparseVector::dim(self)
    }
    fn norm_sq(&self) -> f64 {
        SparseVector::norm_sq(self)
    }
    fn dot_sparse(&self, a: &SparseVector) -> f64 {
        a.dot(self)
    }
}

impl CosineTarget for [f32] {
    fn dim(&self) -> usize {
        self.len()
    }
    fn norm_sq(&self) -> f64 {
        self.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
    }
    fn dot_sparse(&self, a: &SparseVector) -> f64 {
        a.dot_dense(self)
    }
}

impl CosineTarget for Vec<f32> {
    fn dim(&self) -> usize {
        self.len()
    }
    fn norm_sq(&self) -> f64 {
        self.as_slice().norm_sq()
    }
    fn dot_sparse(&self, a: &SparseVector) -> f64 {
        a.dot_dense(self)
    }
}

// Squared norms keep `cos(a, a)` exactly 1: `sqrt(x * x) == x` in IEEE
// arithmetic and the dot product sums in the same order as the norm.
fn cosine_from_parts(dot: f64, na_sq: f64, nb_sq: f64) -> f64 {
    if na_sq == 0.0 || nb_sq == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na_sq * nb_sq).sqrt()).clamp(0.0, 2.0)
}

/// `1 - a.b / (|a||b|)`, or 1 when either side is the zero vector.
pub fn cosine_distance<B: CosineTarget + ?Sized>(a: &SparseVector, b: &B) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::mismatch("vector dim", a.dim(), b.dim()));
    }
    Ok(cosine_from_parts(b.dot_sparse(a), a.norm_sq(), b.norm_sq()))
}

/// Cosine similarity with the same zero-vector convention (0 when undefined).
pub fn cosine_similarity<B: CosineTarget + ?Sized>(a: &SparseVector, b: &B) -> Result<f64> {
    Ok(1.0 - cosine_distance(a, b)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    dim: usize,
    /// `K x dim`, row-major, unit rows.
    centroids: Vec<f32>,
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignedSequence {
    pub id: String,
    pub clusters: Vec<u32>,
}

impl ClusterModel {
    pub fn new(dim: usize, centroids: Vec<f32>, inertia: f64) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(dim) {
            return Err(Error::Invalid(format!(
                "centroid matrix of length {} does not fit dim {dim}",
                centroids.len()
            )));
        }
        binio::check_finite("centroids", &centroids)?;
        let model = Self {
            dim,
            centroids,
            inertia,
        };
        if model.num_clusters() < 2 {
            return Err(Error::Invalid("a cluster model needs K >= 2".into()));
        }
        for c in 0..model.num_clusters() {
            let norm = model.centroid(c).norm();
            if (norm - 1.0).abs() > CENTROID_NORM_TOL {
                return Err(Error::Invalid(format!("centroid {c} has norm {norm}")));
            }
        }
        if !(inertia >= 0.0) {
            return Err(Error::Invalid(format!("inertia {inertia} is negative")));
        }
        Ok(model)
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    pub fn centroids(&self) -> impl Iterator<Item = &[f32]> {
        self.centroids.chunks_exact(self.dim)
    }

    /// Nearest centroid by cosine distance, lowest id on ties.
    pub fn assign(&self, v: &SparseVector) -> Result<usize> {
        if v.dim() != self.dim {
            return Err(Error::mismatch("vector dim (n)", self.dim, v.dim()));
        }
        Ok(self.nearest(v).0)
    }

    fn nearest(&self, v: &SparseVector) -> (usize, f64) {
        let nv = v.norm_sq();
        let mut best = (0, f64::INFINITY);
        for (c, row) in self.centroids().enumerate() {
            let d = cosine_from_parts(v.dot_dense(row), nv, row.norm_sq());
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    }

    /// Summed cosine distance of each vector to its assigned centroid.
    pub fn objective(&self, vectors: &[SparseVector]) -> Result<f64> {
        let mut total = 0.0;
        for v in vectors {
            if v.dim() != self.dim {
                return Err(Error::mismatch("vector dim (n)", self.dim, v.dim()));
            }
            total += self.nearest(v).1;
        }
        Ok(total)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(KMC_MAGIC)
            .u32(KMC_VERSION)
            .u32(self.num_clusters() as u32)
            .u32(self.dim as u32)
            .f32s(&self.centroids)
            .f64(self.inertia);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("KMC1", bytes);
        r.expect_magic(KMC_MAGIC)?;
        r.expect_version(KMC_VERSION)?;
        let k = u64::from(r.u32()?);
        let dim = r.u32()?;
        let centroids = r.f32_vec(k * u64::from(dim))?;
        let inertia = r.f64()?;
        r.finish()?;
        Self::new(dim as usize, centroids, inertia)
    }
}

pub fn read_centroids(path: &Path) -> Result<ClusterModel> {
    ClusterModel::from_bytes(&binio::read_file(path)?)
}

pub fn write_centroids(model: &ClusterModel, path: &Path) -> Result<()> {
    binio::write_file(path, &model.to_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitParams {
    pub num_clusters: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            num_clusters: 256,
            max_iters: 100,
            tol: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterFit {
    pub model: ClusterModel,
    /// Objective after each assignment pass, in iteration order.
    pub history: Vec<f64>,
    /// Final assignment of each input vector.
    pub assignments: Vec<usize>,
    /// Number of empty clusters that had to be reseeded.
    pub reseeds: usize,
}

/// Working copy of a point: its unit direction (empty for zero vectors).
struct UnitPoint {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl UnitPoint {
    fn new(v: &SparseVector) -> Self {
        let norm = v.norm();
        if norm == 0.0 {
            return Self {
                indices: Vec::new(),
                values: Vec::new(),
            };
        }
        Self {
            indices: v.indices().iter().map(|&i| i as usize).collect(),
            values: v.values().iter().map(|&x| f64::from(x) / norm).collect(),
        }
    }

    fn is_zero(&self) -> bool {
        self.values.is_empty()
    }

    fn distance(&self, centroid: &[f64]) -> f64 {
        if self.is_zero() {
            return 1.0;
        }
        let dot: f64 = self.indices.iter().zip(&self.values).map(|(&i, &v)| v * centroid[i]).sum();
        (1.0 - dot).clamp(0.0, 2.0)
    }

    fn to_centroid(&self, dim: usize) -> Vec<f64> {
        let mut c = vec![0.0; dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            c[i] = v;
        }
        c
    }
}

fn assign_all(points: &[UnitPoint], centroids: &[Vec<f64>], labels: &mut [usize], dists: &mut [f64]) -> (f64, bool) {
    let mut total = 0.0;
    let mut changed = false;
    for (p, point) in points.iter().enumerate() {
        let mut best = (0, f64::INFINITY);
        for (c, centroid) in centroids.iter().enumerate() {
            let d = point.distance(centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        if labels[p] != best.0 {
            changed = true;
            labels[p] = best.0;
        }
        dists[p] = best.1;
        total += best.1;
    }
    (total, changed)
}

fn seed_plus_plus<R: Rng>(points: &[UnitPoint], k: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let nonzero: Vec<usize> = (0..points.len()).filter(|&i| !points[i].is_zero()).collect();
    let first = nonzero[rng.random_range(0..nonzero.len())];
    let mut centroids = vec![points[first].to_centroid(dim)];
    let mut nearest: Vec<f64> = points.iter().map(|p| p.distance(&centroids[0])).collect();
    while centroids.len() < k {
        let weights: Vec<f64> = nearest.iter().map(|d| d * d).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in weights.iter().enumerate() {
                acc += w;
                if w > 0.0 && target < acc {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| weights.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // Fewer distinct directions than clusters; the duplicate
            // centroid is repaired by empty-cluster reseeding.
            nonzero[rng.random_range(0..nonzero.len())]
        };
        let c = if points[pick].is_zero() {
            points[first].to_centroid(dim)
        } else {
            points[pick].to_centroid(dim)
        };
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(p.distance(&c));
        }
        centroids.push(c);
    }
    centroids
}

/// Recomputes centroids from `labels`; empty clusters are reseeded to the
/// point farthest from its own centroid among clusters with two or more
/// members. Returns the number of reseeds.
fn update_centroids(points: &[UnitPoint], labels: &[usize], dists: &[f64], centroids: &mut [Vec<f64>]) -> usize {
    let dim = centroids[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut sizes = vec![0usize; k];
    for (p, &c) in points.iter().zip(labels) {
        sizes[c] += 1;
        for (&i, &v) in p.indices.iter().zip(&p.values) {
            sums[c][i] += v;
        }
    }
    let mut empty = Vec::new();
    for c in 0..k {
        let norm = sums[c].iter().map(|v| v * v).sum::<f64>().sqrt();
        if sizes[c] == 0 || norm == 0.0 {
            empty.push(c);
        } else {
            centroids[c] = sums[c].iter().map(|v| v / norm).collect();
        }
    }
    if empty.is_empty() {
        return 0;
    }
    let mut candidates: Vec<usize> = (0..points.len())
        .filter(|&p| sizes[labels[p]] >= 2 && !points[p].is_zero())
        .collect();
    // Farthest first, lowest index on ties.
    candidates.sort_by(|&a, &b| dists[b].partial_cmp(&dists[a]).unwrap().then(a.cmp(&b)));
    let mut reseeds = 0;
    for (c, &p) in empty.iter().zip(&candidates) {
        centroids[*c] = points[p].to_centroid(dim);
        reseeds += 1;
    }
    reseeds
}

/// Uniform seeded subset of `size` indices out of `total` (all of them when
/// `size >= total`), returned in increasing order.
pub fn sample_subset(total: usize, size: usize, seed_value: u64) -> Vec<usize> {
    if size >= total {
        return (0..total).collect();
    }
    let mut rng = seed::rng(seed::derive(seed_value, "cluster-subset"));
    let mut idx = rand::seq::index::sample(&mut rng, total, size).into_vec();
    idx.sort_unstable();
    idx
}

/// Spherical k-means with k-means++ seeding and Lloyd iterations.
pub fn fit(vectors: &[SparseVector], params: &FitParams) -> Result<ClusterFit> {
    let k = params.num_clusters;
    if k < 2 {
        return Err(Error::Invalid("K must be at least 2".into()));
    }
    if vectors.len() < k {
        return Err(Error::Invalid(format!("sample of {} vectors is smaller than K={k}", vectors.len())));
    }
    if params.max_iters == 0 {
        return Err(Error::Invalid("max_iters must be positive".into()));
    }
    let dim = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(Error::mismatch("vector dim (n)", dim, v.dim()));
    }
    let points: Vec<UnitPoint> = vectors.iter().map(UnitPoint::new).collect();
    if points.iter().all(UnitPoint::is_zero) {
        return Err(Error::Invalid("every vector in the sample is zero".into()));
    }

    let mut rng = seed::rng(seed::derive(params.seed, "kmeans++"));
    let mut centroids = seed_plus_plus(&points, k, dim, &mut rng);
    let mut labels = vec![usize::MAX; points.len()];
    let mut dists = vec![0.0; points.len()];
    let mut history = Vec::new();
    let mut reseeds = 0;

    for iter in 0..params.max_iters {
        let (objective, changed) = assign_all(&points, &centroids, &mut labels, &mut dists);
        debug!("stage=cluster iter={iter} objective={objective:.9}");
        let improvement = history.last().map(|&prev: &f64| prev - objective);
        history.push(objective);
        if iter > 0 && (!changed || improvement.is_some_and(|d| d < params.tol)) {
            break;
        }
        reseeds += update_centroids(&points, &labels, &dists, &mut centroids);
        if iter + 1 == params.max_iters {
            let (objective, _) = assign_all(&points, &centroids, &mut labels, &mut dists);
            history.push(objective);
        }
    }

    let mut flat = Vec::with_capacity(k * dim);
    for c in &centroids {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        flat.extend(c.iter().map(|v| (v / norm) as f32));
    }
    let mut model = ClusterModel::new(dim, flat, 0.0)?;
    model.inertia = model.objective(vectors)?;
    let assignments = vectors.iter().map(|v| model.nearest(v).0).collect();
    Ok(ClusterFit {
        model,
        history,
        assignments,
        reseeds,
    })
}

/// Per-token assignment, one output per manifest entry.
pub fn assign_corpus(model: &ClusterModel, sequences: &[Vec<SparseVector>], manifest: &SequenceManifest) -> Result<Vec<AssignedSequence>> {
    if sequences.len() != manifest.len() {
        return Err(Error::mismatch("sequence count", manifest.len(), sequences.len()));
    }
    sequences
        .iter()
        .zip(&manifest.entries)
        .map(|(seq, entry)| {
            if seq.len() as u64 != entry.len {
                return Err(Error::mismatch(format!("length of sequence {:?}", entry.id), entry.len as usize, seq.len()));
            }
            Ok(AssignedSequence {
                id: entry.id.clone(),
                clusters: seq.iter().map(|v| model.assign(v).map(|c| c as u32)).collect::<Result<_>>()?,
            })
        })
        .collect()
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::mismatch("labeling length", a.len(), b.len()));
    }
    let mut joint: HashMap<(u32, u32), u64> = HashMap::new();
    let mut rows: HashMap<u32, u64> = HashMap::new();
    let mut cols: HashMap<u32, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = joint.values().map(|&n| choose2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(v: &[f32]) -> SparseVector {
        SparseVector::from_dense(v)
    }

    #[test]
    fn cosine_edge_cases() {
        let a = sv(&[1.0, 2.0, 0.0]);
        assert!(cosine_distance(&a, &a).unwrap().abs() < 1e-15);
        assert_eq!(cosine_distance(&sv(&[1.0, 0.0]), &sv(&[0.0, 1.0])).unwrap(), 1.0);
        assert!((cosine_distance(&a, &a.scaled(-1.0)).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(cosine_distance(&sv(&[0.0, 0.0]), &sv(&[1.0, 1.0])).unwrap(), 1.0);
        assert!(cosine_distance(&sv(&[1.0]), &sv(&[1.0, 0.0])).is_err());
        assert!(cosine_distance(&a, &vec![1.0f32, 2.0, 0.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn k_points_k_clusters_is_exact() {
        let pts = vec![sv(&[1.0, 0.0, 0.0]), sv(&[0.0, 2.0, 0.0]), sv(&[0.0, 0.0, 3.0])];
        let fit = fit(&pts, &FitParams { num_clusters: 3, seed: 4, ..Default::default() }).unwrap();
        assert!(fit.model.inertia.abs() < 1e-12);
        for (p, &c) in pts.iter().zip(&fit.assignments) {
            assert!(cosine_distance(p, fit.model.centroid(c)).unwrap() < 1e-12);
        }
    }

    #[test]
    fn zero_vector_goes_to_cluster_zero() {
        let m = ClusterModel::new(2, vec![1.0, 0.0, 0.0, 1.0], 0.0).unwrap();
        assert_eq!(m.assign(&sv(&[0.0, 0.0])).unwrap(), 0);
        assert_eq!(m.assign(&sv(&[0.0, 1.0])).unwrap(), 1);
        assert!(m.assign(&sv(&[0.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn fit_rejects_bad_samples() {
        let p = FitParams { num_clusters: 2, ..Default::default() };
        assert!(fit(&[sv(&[1.0, 0.0])], &p).is_err());
        assert!(fit(&[sv(&[0.0, 0.0]), sv(&[0.0, 0.0])], &p).is_err());
    }

    #[test]
    fn duplicate_directions_force_reseed() {
        // Three distinct directions, K = 3, but many copies of one of them.
        let mut pts = vec![sv(&[1.0, 0.0, 0.0]); 10];
        pts.push(sv(&[0.0, 1.0, 0.0]));
        pts.push(sv(&[0.0, 1.0, 0.1]));
        pts.push(sv(&[0.0, 0.0, 1.0]));
        let fit = fit(&pts, &FitParams { num_clusters: 3, seed: 1, ..Default::default() }).unwrap();
        for c in fit.model.centroids() {
            assert!((c.norm() - 1.0).abs() < CENTROID_NORM_TOL);
        }
        for w in fit.history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn kmc_roundtrip() {
        let m = ClusterModel::new(3, vec![1.0, 0.0, 0.0, 0.0, 0.6, 0.8], 1.25).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 16 + 6 * 4 + 8);
        assert_eq!(ClusterModel::from_bytes(&bytes).unwrap(), m);
        let mut bad = bytes.clone();
        bad[0..4].copy_from_slice(b"KMC2");
        assert!(matches!(ClusterModel::from_bytes(&bad), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn rejects_non_unit_centroids() {
        assert!(ClusterModel::new(2, vec![1.0, 0.0, 0.0, 2.0], 0.0).is_err());
        assert!(ClusterModel::new(2, vec![1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn ari_reference_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 3, 3]).unwrap(), 1.0);
        // Known value: labels [0,0,1,1] vs [0,0,1,2] -> ARI = 0.5714...
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 2]).unwrap();
        assert!((ari - 4.0 / 7.0).abs() < 1e-12, "{ari}");
    }

    #[test]
    fn subset_sampling() {
        assert_eq!(sample_subset(5, 10, 1), vec![0, 1, 2, 3, 4]);
        let s = sample_subset(100, 10, 1);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, sample_subset(100, 10, 1));
    }
}
