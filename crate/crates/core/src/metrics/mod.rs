//! Diversity and alignment metrics over labeled corpora.

mod dtw;
mod histogram;
mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::AssignedSequence;
use crate::corpus::{Group, SequenceManifest};
use crate::error::{Error, Result};

pub use dtw::{dtw_by, dtw_distance, dtw_distance_with, min_dtw_to_set, DtwCost};
pub use histogram::{
    centroid_similarity_distribution, consecutive_similarity_distribution, kl_divergence,
    similarity_histogram, Histogram, DEFAULT_BINS, DEFAULT_EPSILON,
};
pub use report::{analyze, full_report, Analysis, DtwColumns, GroupValues, KlTriple, MetricReport, ReportInputs, ReportParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntropyUnit {
    #[default]
    Nats,
    Bits,
}

/// Shannon entropy of a count distribution.
pub fn entropy_of_counts<'a>(counts: impl IntoIterator<Item = &'a u64>, unit: EntropyUnit) -> Result<f64> {
    let counts: Vec<u64> = counts.into_iter().copied().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty("entropy of an empty distribution".into()));
    }
    let n = total as f64;
    let nats = -counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>();
    let nats = nats.max(0.0);
    Ok(match unit {
        EntropyUnit::Nats => nats,
        EntropyUnit::Bits => nats / std::f64::consts::LN_2,
    })
}

/// Entropy (nats) of pooled cluster frequencies across `assigned`.
pub fn cluster_entropy(assigned: &[AssignedSequence]) -> Result<f64> {
    cluster_entropy_in(assigned.iter(), EntropyUnit::Nats)
}

pub fn cluster_entropy_in<'a>(assigned: impl IntoIterator<Item = &'a AssignedSequence>, unit: EntropyUnit) -> Result<f64> {
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    for seq in assigned {
        for &c in &seq.clusters {
            *counts.entry(c).or_default() += 1;
        }
    }
    entropy_of_counts(counts.values(), unit)
}

/// Mean token length per analysis group; absent groups are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LengthStats {
    pub original: Option<f64>,
    pub correct: Option<f64>,
    pub incorrect: Option<f64>,
}

impl LengthStats {
    pub fn get(&self, group: Group) -> Option<f64> {
        match group {
            Group::Original => self.original,
            Group::Correct => self.correct,
            Group::Incorrect => self.incorrect,
        }
    }
}

pub fn length_stats(manifest: &SequenceManifest) -> LengthStats {
    let mean = |group: Group| {
        let lens: Vec<u64> = manifest
            .entries
            .iter()
            .filter(|e| e.group() == Some(group))
            .map(|e| e.len)
            .collect();
        (!lens.is_empty()).then(|| lens.iter().sum::<u64>() as f64 / lens.len() as f64)
    };
    LengthStats {
        original: mean(Group::Original),
        correct: mean(Group::Correct),
        incorrect: mean(Group::Incorrect),
    }
}
