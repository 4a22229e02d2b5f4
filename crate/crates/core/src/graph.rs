//! Cluster-transition graph and the edge-weight reward.
//!
//! Vertices are cluster ids; the weight of `(i, j)` counts how often a
//! token assigned to cluster `i` is immediately followed by one assigned to
//! `j` within a reference sequence. The reward of a sequence is the sum of
//! the weights of the transitions it makes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::binio::{self, Reader, Writer};
use crate::cluster::AssignedSequence;
use crate::corpus::{Dataset, SequenceManifest};
use crate::error::{Error, Result};

const CTG_MAGIC: &[u8; 4] = b"CTG1";
const CTG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterGraph {
    num_clusters: u32,
    edges: BTreeMap<(u32, u32), u64>,
    total_transitions: u64,
}

impl ClusterGraph {
    pub fn empty(num_clusters: usize) -> Result<Self> {
        if num_clusters == 0 || num_clusters > u32::MAX as usize {
            return Err(Error::Invalid(format!("invalid cluster count {num_clusters}")));
        }
        Ok(Self {
            num_clusters: num_clusters as u32,
            edges: BTreeMap::new(),
            total_transitions: 0,
        })
    }

    /// Builds a graph from explicit `(src, dst, weight)` triples; zero
    /// weights are dropped and repeated pairs are summed.
    pub fn from_edges(num_clusters: usize, edges: impl IntoIterator<Item = (u32, u32, u64)>) -> Result<Self> {
        let mut g = Self::empty(num_clusters)?;
        for (src, dst, w) in edges {
            g.check_id(src)?;
            g.check_id(dst)?;
            if w > 0 {
                *g.edges.entry((src, dst)).or_default() += w;
                g.total_transitions += w;
            }
        }
        Ok(g)
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters as usize
    }

    pub fn total_transitions(&self) -> u64 {
        self.total_transitions
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges in `(src, dst)` order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, u64)> + '_ {
        self.edges.iter().map(|(&(s, d), &w)| (s, d, w))
    }

    /// Outgoing `(dst, weight)` pairs of `src`, ascending by `dst`.
    pub fn successors(&self, src: u32) -> impl Iterator<Item = (u32, u64)> + '_ {
        self.edges.range((src, 0)..=(src, u32::MAX)).map(|(&(_, d), &w)| (d, w))
    }

    pub fn out_weight(&self, src: u32) -> u64 {
        self.successors(src).map(|(_, w)| w).sum()
    }

    pub fn max_weight(&self) -> u64 {
        self.edges.values().copied().max().unwrap_or(0)
    }

    fn check_id(&self, id: u32) -> Result<()> {
        if id >= self.num_clusters {
            return Err(Error::out_of_range("cluster id", id as usize, self.num_clusters as usize));
        }
        Ok(())
    }

    pub fn edge_weight(&self, i: u32, j: u32) -> Result<u64> {
        self.check_id(i)?;
        self.check_id(j)?;
        Ok(self.edges.get(&(i, j)).copied().unwrap_or(0))
    }

    fn add_sequence(&mut self, clusters: &[u32]) -> Result<()> {
        for &c in clusters {
            self.check_id(c)?;
        }
        for w in clusters.windows(2) {
            *self.edges.entry((w[0], w[1])).or_default() += 1;
            self.total_transitions += 1;
        }
        Ok(())
    }

    /// Sum of edge weights over the consecutive pairs of `clusters`.
    pub fn reward_of(&self, clusters: &[u32]) -> Result<u64> {
        for &c in clusters {
            self.check_id(c)?;
        }
        Ok(clusters
            .windows(2)
            .map(|w| self.edges.get(&(w[0], w[1])).copied().unwrap_or(0))
            .sum())
    }

    pub fn reward(&self, p: &AssignedSequence) -> Result<u64> {
        self.reward_of(&p.clusters)
    }

    /// Reward divided by the number of tokens.
    pub fn per_token_reward_of(&self, clusters: &[u32]) -> Result<f64> {
        if clusters.is_empty() {
            return Err(Error::Empty("per-token reward of an empty sequence".into()));
        }
        Ok(self.reward_of(clusters)? as f64 / clusters.len() as f64)
    }

    pub fn per_token_reward(&self, p: &AssignedSequence) -> Result<f64> {
        self.per_token_reward_of(&p.clusters)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(CTG_MAGIC)
            .u32(CTG_VERSION)
            .u32(self.num_clusters)
            .u64(self.edges.len() as u64);
        for (s, d, wt) in self.edges() {
            w.u32(s).u32(d).u64(wt);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("CTG1", bytes);
        r.expect_magic(CTG_MAGIC)?;
        r.expect_version(CTG_VERSION)?;
        let k = r.u32()?;
        let count = r.u64()?;
        let mut g = Self::empty(k as usize)?;
        let mut prev: Option<(u32, u32)> = None;
        for _ in 0..count {
            let (s, d, w) = (r.u32()?, r.u32()?, r.u64()?);
            g.check_id(s)?;
            g.check_id(d)?;
            if w == 0 {
                return Err(Error::Invalid(format!("CTG1 edge ({s}, {d}) has zero weight")));
            }
            if prev.is_some_and(|p| p >= (s, d)) {
                return Err(Error::Invalid("CTG1 edges are not strictly sorted by (src, dst)".into()));
            }
            prev = Some((s, d));
            g.edges.insert((s, d), w);
            g.total_transitions += w;
        }
        r.finish()?;
        Ok(g)
    }

    /// Tab-separated export: a `# clusters=K` line, a header, then one
    /// `src dst weight` row per edge.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# clusters={}\nsrc\tdst\tweight\n", self.num_clusters);
        for (s, d, w) in self.edges() {
            writeln!(out, "{s}\t{d}\t{w}").unwrap();
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let k = lines
            .next()
            .and_then(|l| l.strip_prefix("# clusters="))
            .ok_or_else(|| Error::Parse("graph TSV must start with '# clusters=K'".into()))?
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("cluster count: {e}")))?;
        if lines.next().map(str::trim) != Some("src\tdst\tweight") {
            return Err(Error::Parse("graph TSV header must be 'src\\tdst\\tweight'".into()));
        }
        let mut edges = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse(format!("graph TSV row {}: expected 3 fields", n + 3)));
            }
            let parse = |s: &str| s.trim().parse::<u64>().map_err(|e| Error::Parse(format!("graph TSV row {}: {e}", n + 3)));
            let (s, d, w) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
            if s > u64::from(u32::MAX) || d > u64::from(u32::MAX) {
                return Err(Error::Parse(format!("graph TSV row {}: cluster id too large", n + 3)));
            }
            edges.push((s as u32, d as u32, w));
        }
        Self::from_edges(k, edges)
    }
}

/// Counts consecutive transitions within each reference-tagged sequence.
/// Sequences tagged `other` are skipped; pairs never cross a sequence
/// boundary.
pub fn build_graph(assigned: &[AssignedSequence], manifest: &SequenceManifest, num_clusters: usize) -> Result<ClusterGraph> {
    let datasets: HashMap<&str, Dataset> = manifest.entries.iter().map(|e| (e.id.as_str(), e.dataset)).collect();
    let mut g = ClusterGraph::empty(num_clusters)?;
    for seq in assigned {
        match datasets.get(seq.id.as_str()) {
            Some(Dataset::Reference) => g.add_sequence(&seq.clusters)?,
            Some(Dataset::Other) => {}
            None => return Err(Error::Invalid(format!("sequence {:?} is not in the manifest", seq.id))),
        }
    }
    Ok(g)
}

pub fn read_graph(path: &Path) -> Result<ClusterGraph> {
    ClusterGraph::from_bytes(&binio::read_file(path)?)
}

pub fn write_graph(graph: &ClusterGraph, path: &Path) -> Result<()> {
    binio::write_file(path, &graph.to_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ManifestEntry;

    pub(crate) fn reference_corpus(seqs: &[&[u32]]) -> (Vec<AssignedSequence>, SequenceManifest) {
        let mut start = 0;
        let mut entries = Vec::new();
        let mut assigned = Vec::new();
        for (i, s) in seqs.iter().enumerate() {
            let id = format!("s{i}");
            entries.push(ManifestEntry {
                id: id.clone(),
                dataset: Dataset::Reference,
                start,
                len: s.len() as u64,
                label: None,
            });
            start += s.len() as u64;
            assigned.push(AssignedSequence { id, clusters: s.to_vec() });
        }
        (assigned, SequenceManifest::new(entries).unwrap())
    }

    #[test]
    fn direct_count() {
        let (a, m) = reference_corpus(&[&[1, 2, 1, 2, 3]]);
        let g = build_graph(&a, &m, 4).unwrap();
        assert_eq!(g.edge_weight(1, 2).unwrap(), 2);
        assert_eq!(g.edge_weight(2, 1).unwrap(), 1);
        assert_eq!(g.edge_weight(2, 3).unwrap(), 1);
        assert_eq!(g.edge_weight(3, 1).unwrap(), 0);
        assert_eq!(g.total_transitions(), 4);
        assert_eq!(g.reward(&a[0]).unwrap(), 6);
        assert!((g.per_token_reward(&a[0]).unwrap() - 1.2).abs() < 1e-15);
    }

    #[test]
    fn single_token_sequences() {
        let (a, m) = reference_corpus(&[&[1]]);
        let g = build_graph(&a, &m, 4).unwrap();
        assert!(g.is_empty());
        assert_eq!(g.reward_of(&[2]).unwrap(), 0);
        assert_eq!(g.per_token_reward_of(&[2]).unwrap(), 0.0);
        assert!(g.per_token_reward_of(&[]).is_err());
    }

    #[test]
    fn no_cross_boundary_edges() {
        let (a, m) = reference_corpus(&[&[1, 2], &[2, 3]]);
        let g = build_graph(&a, &m, 4).unwrap();
        assert_eq!(g.edge_weight(1, 2).unwrap(), 1);
        assert_eq!(g.edge_weight(2, 3).unwrap(), 1);
        assert_eq!(g.edge_weight(2, 2).unwrap(), 0);
    }

    #[test]
    fn self_loops() {
        let (a, m) = reference_corpus(&[&[5, 5, 5]]);
        let g = build_graph(&a, &m, 6).unwrap();
        assert_eq!(g.edge_weight(5, 5).unwrap(), 2);
    }

    #[test]
    fn other_sequences_are_ignored() {
        let (a, mut m) = reference_corpus(&[&[0, 1], &[1, 0, 9]]);
        m.entries[1].dataset = Dataset::Other;
        let g = build_graph(&a, &m, 2).unwrap();
        assert_eq!(g.total_transitions(), 1);
    }

    #[test]
    fn out_of_range_ids_are_errors() {
        let (a, m) = reference_corpus(&[&[0, 4]]);
        assert!(matches!(build_graph(&a, &m, 4), Err(Error::OutOfRange { .. })));
        let g = ClusterGraph::empty(4).unwrap();
        assert!(g.edge_weight(0, 4).is_err());
        assert!(g.reward_of(&[0, 7]).is_err());
    }

    #[test]
    fn absent_edges_reward_zero() {
        let (a, m) = reference_corpus(&[&[1, 2, 1, 2, 3]]);
        let g = build_graph(&a, &m, 4).unwrap();
        assert_eq!(g.reward_of(&[3, 0, 3, 3]).unwrap(), 0);
    }

    #[test]
    fn binary_and_tsv_roundtrip() {
        let (a, m) = reference_corpus(&[&[1, 2, 1, 2, 3], &[0, 0, 3]]);
        let g = build_graph(&a, &m, 4).unwrap();
        let bytes = g.to_bytes();
        assert_eq!(bytes.len(), 20 + 16 * g.num_edges());
        assert_eq!(ClusterGraph::from_bytes(&bytes).unwrap(), g);
        let tsv = g.to_tsv();
        assert!(tsv.starts_with("# clusters=4\nsrc\tdst\tweight\n0\t0\t1\n"));
        assert_eq!(ClusterGraph::from_tsv(&tsv).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn unsorted_binary_rejected() {
        let g = ClusterGraph::from_edges(3, [(0, 1, 1), (1, 0, 2)]).unwrap();
        let mut bytes = g.to_bytes();
        // swap the two 16-byte edge records
        let (a, b) = bytes[20..].split_at_mut(16);
        a.swap_with_slice(b);
        assert!(ClusterGraph::from_bytes(&bytes).is_err());
    }
}
