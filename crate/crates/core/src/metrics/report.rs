//! Assembles every metric into one report per corpus.

use serde::{Deserialize, Serialize};

use super::{
    centroid_similarity_distribution, cluster_entropy_in, consecutive_similarity_distribution,
    kl_divergence, length_stats, min_dtw_to_set, DtwCost, EntropyUnit, Histogram, LengthStats,
    DEFAULT_BINS, DEFAULT_EPSILON,
};
use crate::cluster::{AssignedSequence, ClusterModel};
use crate::corpus::{Group, SequenceManifest};
use crate::error::{Error, Result};
use crate::seed;
use crate::sparse::SparseVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportParams {
    pub bins: usize,
    pub epsilon: f64,
    /// Originals compared per generated sequence; `None` compares all.
    pub dtw_subsample: Option<usize>,
    pub dtw_cost: DtwCost,
    pub entropy_unit: EntropyUnit,
    pub seed: u64,
}

impl Default for ReportParams {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            epsilon: DEFAULT_EPSILON,
            dtw_subsample: None,
            dtw_cost: DtwCost::Cosine,
            entropy_unit: EntropyUnit::Nats,
            seed: 0,
        }
    }
}

/// Artifacts of one corpus, aligned index-by-index with the manifest.
#[derive(Debug, Clone, Copy)]
pub struct ReportInputs<'a> {
    pub manifest: &'a SequenceManifest,
    pub assigned: &'a [AssignedSequence],
    pub sparse: &'a [Vec<SparseVector>],
    pub model: &'a ClusterModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupValues {
    pub original: Option<f64>,
    pub correct: Option<f64>,
    pub incorrect: Option<f64>,
}

impl GroupValues {
    fn set(&mut self, group: Group, value: Option<f64>) {
        match group {
            Group::Original => self.original = value,
            Group::Correct => self.correct = value,
            Group::Incorrect => self.incorrect = value,
        }
    }
}

/// Mean minimum DTW distance to the originals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DtwColumns {
    pub correct: Option<f64>,
    pub incorrect: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KlTriple {
    /// KL(correct || original)
    pub corr_orig: Option<f64>,
    /// KL(incorrect || original)
    pub incorr_orig: Option<f64>,
    /// KL(correct || incorrect)
    pub corr_incorr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub dtw: DtwColumns,
    pub kl_sae: KlTriple,
    pub kl_centroid: KlTriple,
    pub entropy: GroupValues,
    pub mean_length: GroupValues,
    /// One line per metric that could not be computed.
    pub missing: Vec<String>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("metric report: {e}")))
    }

    /// True when every numeric field is present.
    pub fn is_complete(&self) -> bool {
        let g = |v: &GroupValues| v.original.is_some() && v.correct.is_some() && v.incorrect.is_some();
        let k = |v: &KlTriple| v.corr_orig.is_some() && v.incorr_orig.is_some() && v.corr_incorr.is_some();
        self.dtw.correct.is_some()
            && self.dtw.incorrect.is_some()
            && k(&self.kl_sae)
            && k(&self.kl_centroid)
            && g(&self.entropy)
            && g(&self.mean_length)
    }
}

/// Per-group similarity histograms, `None` where a group has no pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupHistograms {
    pub sae: [Option<Histogram>; 3],
    pub centroid: [Option<Histogram>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub report: MetricReport,
    pub histograms: GroupHistograms,
}

fn group_index(g: Group) -> usize {
    match g {
        Group::Original => 0,
        Group::Correct => 1,
        Group::Incorrect => 2,
    }
}

struct Note<'a>(&'a mut Vec<String>);

impl Note<'_> {
    fn keep<T>(&mut self, metric: &str, r: Result<T>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.0.push(format!("{metric}: {e}"));
                None
            }
        }
    }
}

/// Computes the report and the histograms it was derived from.
pub fn analyze(inputs: ReportInputs<'_>, params: &ReportParams) -> Result<Analysis> {
    let entries = &inputs.manifest.entries;
    if inputs.assigned.len() != entries.len() || inputs.sparse.len() != entries.len() {
        return Err(Error::mismatch(
            "artifact sequence count",
            entries.len(),
            inputs.assigned.len().min(inputs.sparse.len()),
        ));
    }
    for ((e, a), s) in entries.iter().zip(inputs.assigned).zip(inputs.sparse) {
        if e.id != a.id {
            return Err(Error::Invalid(format!("assignment {:?} does not match manifest entry {:?}", a.id, e.id)));
        }
        if a.clusters.len() as u64 != e.len || s.len() as u64 != e.len {
            return Err(Error::mismatch(format!("length of sequence {:?}", e.id), e.len as usize, a.clusters.len()));
        }
    }

    let members = |g: Group| -> Vec<usize> { (0..entries.len()).filter(|&i| entries[i].group() == Some(g)).collect() };
    let groups: [Vec<usize>; 3] = [members(Group::Original), members(Group::Correct), members(Group::Incorrect)];
    let missing_group = |g: Group| Error::Empty(format!("no sequences in group {}", g.name()));

    let mut report = MetricReport::default();
    let mut missing = Vec::new();
    let mut note = Note(&mut missing);

    for g in Group::ALL {
        let idx = &groups[group_index(g)];
        let value = if idx.is_empty() {
            Err(missing_group(g))
        } else {
            cluster_entropy_in(idx.iter().map(|&i| &inputs.assigned[i]), params.entropy_unit)
        };
        let v = note.keep(&format!("entropy.{}", g.name()), value);
        report.entropy.set(g, v);
    }

    let lengths: LengthStats = length_stats(inputs.manifest);
    for g in Group::ALL {
        let v = lengths.get(g);
        if v.is_none() {
            note.keep::<()>(&format!("mean_length.{}", g.name()), Err(missing_group(g)));
        }
        report.mean_length.set(g, v);
    }

    let originals: Vec<Vec<SparseVector>> = groups[0].iter().map(|&i| inputs.sparse[i].clone()).collect();
    for g in [Group::Correct, Group::Incorrect] {
        let idx = &groups[group_index(g)];
        let value = if idx.is_empty() {
            Err(missing_group(g))
        } else if originals.is_empty() {
            Err(missing_group(Group::Original))
        } else {
            let dtw_seed = seed::derive(params.seed, g.name());
            idx.iter()
                .enumerate()
                .map(|(n, &i)| {
                    min_dtw_to_set(
                        &inputs.sparse[i],
                        &originals,
                        params.dtw_subsample,
                        seed::derive_indexed(dtw_seed, n as u64),
                        params.dtw_cost,
                    )
                })
                .sum::<Result<f64>>()
                .map(|total| total / idx.len() as f64)
        };
        let v = note.keep(&format!("dtw.{}", g.name()), value);
        match g {
            Group::Correct => report.dtw.correct = v,
            _ => report.dtw.incorrect = v,
        }
    }

    let mut histograms = GroupHistograms::default();
    for g in Group::ALL {
        let idx = &groups[group_index(g)];
        if idx.is_empty() {
            continue;
        }
        let sparse: Vec<&[SparseVector]> = idx.iter().map(|&i| inputs.sparse[i].as_slice()).collect();
        histograms.sae[group_index(g)] = note.keep(
            &format!("histogram.sae.{}", g.name()),
            consecutive_similarity_distribution(&sparse, params.bins, params.epsilon),
        );
        let assigned: Vec<&AssignedSequence> = idx.iter().map(|&i| &inputs.assigned[i]).collect();
        histograms.centroid[group_index(g)] = note.keep(
            &format!("histogram.centroid.{}", g.name()),
            centroid_similarity_distribution(inputs.model, &assigned, params.bins, params.epsilon),
        );
    }

    let pairs = [
        (Group::Correct, Group::Original),
        (Group::Incorrect, Group::Original),
        (Group::Correct, Group::Incorrect),
    ];
    for (source, hists, triple) in [
        ("kl_sae", &histograms.sae, &mut report.kl_sae),
        ("kl_centroid", &histograms.centroid, &mut report.kl_centroid),
    ] {
        let mut values = [None; 3];
        for (slot, (p, q)) in values.iter_mut().zip(pairs) {
            let metric = format!("{source}.{}_{}", p.name(), q.name());
            *slot = match (&hists[group_index(p)], &hists[group_index(q)]) {
                (Some(hp), Some(hq)) => note.keep(&metric, kl_divergence(hp, hq)),
                (None, _) => note.keep(&metric, Err(missing_group(p))),
                (_, None) => note.keep(&metric, Err(missing_group(q))),
            };
        }
        *triple = KlTriple {
            corr_orig: values[0],
            incorr_orig: values[1],
            corr_incorr: values[2],
        };
    }

    report.missing = missing;
    Ok(Analysis { report, histograms })
}

pub fn full_report(inputs: ReportInputs<'_>, params: &ReportParams) -> Result<MetricReport> {
    analyze(inputs, params).map(|a| a.report)
}
