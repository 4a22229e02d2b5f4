//! Token-embedding corpora: the `EMB1` store, the sequence manifest, and
//! a Markov-chain synthetic generator with known ground truth.
//!
//! EMB1 layout (all little-endian):
//!
//! ```text
//! 0..4    magic "EMB1"
//! 4..8    version (u32) = 1
//! 8..12   dim (u32)
//! 12..16  reserved, zero
//! 16..24  num_tokens (u64)
//! 24..    num_tokens * dim f32, row-major
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::seed;

const EMB_MAGIC: &[u8; 4] = b"EMB1";
const EMB_VERSION: u32 = 1;
pub const EMB_HEADER_LEN: usize = 24;

/// Row-major `num_tokens x dim` matrix of token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingStore {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dim must be positive".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Invalid(format!(
                "data length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        binio::check_finite("embedding data", &data)?;
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_tokens(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, token: usize) -> &[f32] {
        &self.data[token * self.dim..(token + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Per-dimension mean over all tokens (zeros for an empty store).
    pub fn mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.dim];
        for row in self.rows() {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += f64::from(v);
            }
        }
        let n = self.num_tokens().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(EMB_MAGIC)
            .u32(EMB_VERSION)
            .u32(self.dim as u32)
            .u32(0)
            .u64(self.num_tokens() as u64)
            .f32s(&self.data);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("EMB1", bytes);
        r.expect_magic(EMB_MAGIC)?;
        r.expect_version(EMB_VERSION)?;
        let dim = r.u32()? as usize;
        let _reserved = r.u32()?;
        let num_tokens = r.u64()?;
        if dim == 0 {
            return Err(Error::Invalid("EMB1 header declares dim 0".into()));
        }
        let data = r.f32_vec(num_tokens.saturating_mul(dim as u64))?;
        r.finish()?;
        Self::new(dim, data)
    }
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingStore> {
    EmbeddingStore::from_bytes(&binio::read_file(path)?)
}

pub fn write_embeddings(store: &EmbeddingStore, path: &Path) -> Result<()> {
    binio::check_finite("embedding data", &store.data)?;
    binio::write_file(path, &store.to_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Reference,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Correct,
    Incorrect,
}

/// Analysis groups: reference sequences are the originals, other sequences
/// are grouped by their correctness label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Original,
    Correct,
    Incorrect,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Original, Group::Correct, Group::Incorrect];

    pub fn name(self) -> &'static str {
        match self {
            Group::Original => "original",
            Group::Correct => "correct",
            Group::Incorrect => "incorrect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub dataset: Dataset,
    pub start: u64,
    pub len: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl ManifestEntry {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start as usize..(self.start + self.len) as usize
    }

    /// Group membership; a labeled reference sequence still counts as original.
    pub fn group(&self) -> Option<Group> {
        match (self.dataset, self.label) {
            (Dataset::Reference, _) => Some(Group::Original),
            (Dataset::Other, Some(Label::Correct)) => Some(Group::Correct),
            (Dataset::Other, Some(Label::Incorrect)) => Some(Group::Incorrect),
            (Dataset::Other, None) => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SequenceManifest {
    pub entries: Vec<ManifestEntry>,
}

impl SequenceManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut ids = HashSet::new();
        for e in &entries {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Invalid(format!("duplicate sequence id {:?}", e.id)));
            }
            if e.len == 0 {
                return Err(Error::Invalid(format!("sequence {:?} has zero length", e.id)));
            }
        }
        let mut spans: Vec<(u64, u64, &str)> =
            entries.iter().map(|e| (e.start, e.start + e.len, e.id.as_str())).collect();
        spans.sort_unstable();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Invalid(format!(
                    "sequences {:?} and {:?} overlap",
                    w[0].2, w[1].2
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.len).sum()
    }

    /// Checks every range lies within a store of `num_tokens` tokens.
    pub fn check_bounds(&self, num_tokens: usize) -> Result<()> {
        for e in &self.entries {
            let end = e.start + e.len;
            if end > num_tokens as u64 {
                return Err(Error::OutOfRange {
                    what: format!("sequence {:?} end", e.id),
                    value: end,
                    limit: num_tokens as u64,
                });
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let entries = parse_jsonl(text)?;
        Self::new(entries)
    }
}

pub(crate) fn parse_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<SequenceManifest> {
    SequenceManifest::new(read_jsonl(path)?)
}

pub fn write_manifest(manifest: &SequenceManifest, path: &Path) -> Result<()> {
    write_jsonl(path, &manifest.entries)
}

/// Ground-truth latent state path of one generated sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatePath {
    pub id: String,
    pub states: Vec<u32>,
}

/// Markov-chain generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_states: usize,
    pub dim: usize,
    /// Row-stochastic `num_states x num_states` matrix.
    pub transition_matrix: Vec<Vec<f64>>,
    /// One unit vector per state.
    pub emission_directions: Vec<Vec<f64>>,
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.dim == 0 {
            return Err(Error::Invalid("num_states and dim must be positive".into()));
        }
        if self.transition_matrix.len() != self.num_states {
            return Err(Error::mismatch(
                "transition matrix rows",
                self.num_states,
                self.transition_matrix.len(),
            ));
        }
        for (i, row) in self.transition_matrix.iter().enumerate() {
            if row.len() != self.num_states {
                return Err(Error::mismatch("transition matrix columns", self.num_states, row.len()));
            }
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Invalid(format!("transition row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!("transition row {i} sums to {sum}")));
            }
        }
        if self.emission_directions.len() != self.num_states {
            return Err(Error::mismatch(
                "emission directions",
                self.num_states,
                self.emission_directions.len(),
            ));
        }
        for (i, d) in self.emission_directions.iter().enumerate() {
            if d.len() != self.dim {
                return Err(Error::mismatch("emission direction length", self.dim, d.len()));
            }
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!("emission direction {i} has norm {norm}")));
            }
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Invalid("noise_scale must be a finite non-negative real".into()));
        }
        Ok(())
    }

    /// A skewed random chain: each row puts geometrically decaying mass
    /// (ratio `decay`) on a random permutation of the states, and the
    /// emission directions are random unit vectors. Everything is drawn
    /// from `seed`.
    pub fn random_skewed(num_states: usize, dim: usize, decay: f64, noise_scale: f64, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, "synthetic-spec"));
        let mut transition_matrix = Vec::with_capacity(num_states);
        for _ in 0..num_states {
            let mut order: Vec<usize> = (0..num_states).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let mut row = vec![0.0; num_states];
            let mut mass = 1.0;
            for &j in &order {
                row[j] = mass;
                mass *= decay;
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= sum);
            transition_matrix.push(row);
        }
        let emission_directions = (0..num_states)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-6 {
                    break v.iter().map(|x| x / norm).collect();
                }
            })
            .collect();
        Self {
            num_states,
            dim,
            transition_matrix,
            emission_directions,
            noise_scale,
            seed,
        }
    }
}

/// Output of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub store: EmbeddingStore,
    pub manifest: SequenceManifest,
    pub true_states: Vec<StatePath>,
}

/// How the generator mixes chain-following and off-chain sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceKind {
    /// Follows the transition matrix.
    Chain,
    /// Follows the chain but repeats the current state with probability
    /// `repeat_prob` (stored as parts per million).
    Repetitive { repeat_ppm: u32 },
    /// Independent uniform states.
    Uniform,
}

/// One batch of sequences requested from the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub id_prefix: String,
    pub dataset: Dataset,
    pub label: Option<Label>,
    pub kind: SequenceKind,
    pub count: usize,
    pub len: usize,
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver above the cumulative sum; take the last
    // state with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Generates `num_sequences` reference-tagged chains of length `seq_len`.
pub fn generate_synthetic(spec: &SyntheticSpec, num_sequences: usize, seq_len: usize) -> Result<SyntheticCorpus> {
    generate_batches(
        spec,
        &[SequenceBatch {
            id_prefix: "seq".into(),
            dataset: Dataset::Reference,
            label: None,
            kind: SequenceKind::Chain,
            count: num_sequences,
            len: seq_len,
        }],
    )
}

/// Generates several batches into one contiguous store. Batches draw from
/// independent derived streams, so adding a batch leaves earlier ones
/// unchanged.
pub fn generate_batches(spec: &SyntheticSpec, batches: &[SequenceBatch]) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let k = spec.num_states;
    let mut data = Vec::new();
    let mut entries = Vec::new();
    let mut true_states = Vec::new();
    let mut start = 0u64;
    for (b, batch) in batches.iter().enumerate() {
        if batch.len == 0 {
            return Err(Error::Invalid("sequence length must be positive".into()));
        }
        let mut rng = seed::rng(seed::derive_indexed(seed::derive(spec.seed, "generate"), b as u64));
        for s in 0..batch.count {
            let mut states = Vec::with_capacity(batch.len);
            let mut state = rng.random_range(0..k);
            states.push(state as u32);
            for _ in 1..batch.len {
                state = match batch.kind {
                    SequenceKind::Chain => sample_index(&mut rng, &spec.transition_matrix[state]),
                    SequenceKind::Repetitive { repeat_ppm } => {
                        if rng.random_range(0..1_000_000u32) < repeat_ppm {
                            state
                        } else {
                            sample_index(&mut rng, &spec.transition_matrix[state])
                        }
                    }
                    SequenceKind::Uniform => rng.random_range(0..k),
                };
                states.push(state as u32);
            }
            for &st in &states {
                for &d in &spec.emission_directions[st as usize] {
                    let noise: f64 = if spec.noise_scale > 0.0 {
                        spec.noise_scale * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    data.push((d + noise) as f32);
                }
            }
            let id = format!("{}-{s:05}", batch.id_prefix);
            entries.push(ManifestEntry {
                id: id.clone(),
                dataset: batch.dataset,
                start,
                len: batch.len as u64,
                label: batch.label,
            });
            true_states.push(StatePath { id, states });
            start += batch.len as u64;
        }
    }
    Ok(SyntheticCorpus {
        store: EmbeddingStore::new(spec.dim, data)?,
        manifest: SequenceManifest::new(entries)?,
        true_states,
    })
}
