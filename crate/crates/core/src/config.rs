//! Run configuration: one TOML document drives every stage.
//!
//! Stage seeds are never read from the nested sections; they are derived
//! from the top-level `seed` and the stage name, so changing one stage's
//! parameters leaves every other stage's randomness untouched.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::FitParams;
use crate::error::{Error, Result};
use crate::metrics::ReportParams;
use crate::policy::PolicyConfig;
use crate::sae::SaeConfig;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub embeddings: PathBuf,
    pub manifest: PathBuf,
    pub true_states: PathBuf,
    pub checkpoint: PathBuf,
    pub train_log: PathBuf,
    pub centroids: PathBuf,
    pub assignments: PathBuf,
    pub graph: PathBuf,
    pub graph_tsv: PathBuf,
    pub scores: PathBuf,
    pub score_means: PathBuf,
    pub report: PathBuf,
    pub histogram_dir: PathBuf,
    pub sweep: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            embeddings: "embeddings.emb".into(),
            manifest: "manifest.jsonl".into(),
            true_states: "true_states.jsonl".into(),
            checkpoint: "sae.ckpt".into(),
            train_log: "train_log.tsv".into(),
            centroids: "centroids.kmc".into(),
            assignments: "assignments.jsonl".into(),
            graph: "graph.ctg".into(),
            graph_tsv: "graph.tsv".into(),
            scores: "scores.tsv".into(),
            score_means: "score_means.tsv".into(),
            report: "report.json".into(),
            histogram_dir: "histograms".into(),
            sweep: "sweep.tsv".into(),
        }
    }
}

/// Shape of the generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_states: usize,
    pub dim: usize,
    /// Geometric decay of transition mass along each row.
    pub decay: f64,
    pub noise_scale: f64,
    pub reference_sequences: usize,
    pub correct_sequences: usize,
    pub incorrect_sequences: usize,
    /// Uniform-random sequences, tagged `other` with no label.
    pub random_sequences: usize,
    pub seq_len: usize,
    pub incorrect_len: usize,
    /// Probability that an incorrect sequence repeats its current state.
    pub repeat_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_states: 16,
            dim: 32,
            decay: 0.35,
            noise_scale: 0.05,
            reference_sequences: 300,
            correct_sequences: 40,
            incorrect_sequences: 40,
            random_sequences: 40,
            seq_len: 64,
            incorrect_len: 96,
            repeat_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub num_clusters: usize,
    pub max_iters: usize,
    pub tol: f64,
    /// Size of the random token subset the centroids are fitted on.
    pub sample_size: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            num_clusters: 16,
            max_iters: 100,
            tol: 0.0,
            sample_size: 200_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    #[default]
    All,
    Reference,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub select: Selection,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { select: Selection::All }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub temperatures: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            temperatures: vec![0.0, 0.5, 1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Directory every relative path in `paths` resolves against.
    pub work_dir: PathBuf,
    pub paths: Paths,
    pub synthetic: SyntheticConfig,
    pub sae: SaeConfig,
    pub cluster: ClusterConfig,
    pub metrics: ReportParams,
    pub score: ScoreConfig,
    pub policy: PolicyConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synthetic = SyntheticConfig::default();
        Self {
            seed: 7,
            work_dir: "run".into(),
            paths: Paths::default(),
            sae: SaeConfig {
                input_dim: synthetic.dim,
                latent_dim: 128,
                top_k: 8,
                learning_rate: 0.01,
                epochs: 8,
                batch_size: 128,
                seed: 0,
            },
            synthetic,
            cluster: ClusterConfig::default(),
            metrics: ReportParams {
                dtw_subsample: Some(32),
                ..ReportParams::default()
            },
            score: ScoreConfig::default(),
            policy: PolicyConfig {
                max_len: 64,
                num_trajectories: 1000,
                ..PolicyConfig::default()
            },
            sweep: SweepConfig::default(),
        }
    }
}

fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {raw:?} is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let value = value.trim();
    // Bare words that are not valid TOML values are taken as strings.
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path {} crosses a non-table value", path.join("."))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Loads `path` (or the defaults), applies `key.path=value` overrides,
    /// then the global seed override.
    pub fn load(path: Option<&Path>, overrides: &[String], seed_override: Option<u64>) -> Result<Self> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::try_from(RunConfig::default()).map_err(|e| Error::Config(e.to_string()))?,
        };
        for raw in overrides {
            let (key, value) = parse_override(raw)?;
            apply_override(&mut table, &key, value)?;
        }
        if let Some(s) = seed_override {
            let s = i64::try_from(s).map_err(|_| Error::Config("seed must fit in a signed 64-bit integer".into()))?;
            table.insert("seed".into(), toml::Value::Integer(s));
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.sae_config().validate().map_err(|e| Error::Config(format!("sae: {e}")))?;
        self.policy_config().validate().map_err(|e| Error::Config(format!("policy: {e}")))?;
        if self.cluster.num_clusters < 2 {
            return Err(Error::Config("cluster.num_clusters must be at least 2".into()));
        }
        if self.cluster.sample_size < self.cluster.num_clusters {
            return Err(Error::Config("cluster.sample_size must be at least num_clusters".into()));
        }
        if self.metrics.bins == 0 || !(self.metrics.epsilon > 0.0) {
            return Err(Error::Config("metrics.bins and metrics.epsilon must be positive".into()));
        }
        if self.sweep.temperatures.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            return Err(Error::Config("sweep temperatures must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        self.work_dir.join(p)
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive(self.seed, stage)
    }

    pub fn sae_config(&self) -> SaeConfig {
        SaeConfig {
            seed: self.stage_seed("sae"),
            ..self.sae.clone()
        }
    }

    pub fn fit_params(&self) -> FitParams {
        FitParams {
            num_clusters: self.cluster.num_clusters,
            max_iters: self.cluster.max_iters,
            tol: self.cluster.tol,
            seed: self.stage_seed("cluster"),
        }
    }

    pub fn report_params(&self) -> ReportParams {
        ReportParams {
            seed: self.stage_seed("metrics"),
            ..self.metrics.clone()
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            seed: self.stage_seed("policy"),
            ..self.policy.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_roundtrips_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::load(
            None,
            &["sae.epochs=3".into(), "cluster.num_clusters=4".into(), "work_dir=out/x".into(), "metrics.dtw_cost=euclidean".into()],
            Some(99),
        )
        .unwrap();
        assert_eq!(cfg.sae.epochs, 3);
        assert_eq!(cfg.cluster.num_clusters, 4);
        assert_eq!(cfg.work_dir, PathBuf::from("out/x"));
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.metrics.dtw_cost, crate::metrics::DtwCost::Euclidean);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        assert!(matches!(RunConfig::load(None, &["nonsense".into()], None), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(None, &["sae.bogus=1".into()], None), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(None, &["sae.top_k=1000".into()], None), Err(Error::Config(_))));
    }

    #[test]
    fn stage_seeds_depend_only_on_global_seed() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.sae.epochs = 1;
        b.cluster.num_clusters = 3;
        assert_eq!(a.stage_seed("sae"), b.stage_seed("sae"));
        assert_eq!(a.sae_config().seed, b.sae_config().seed);
        b.seed = 8;
        assert_ne!(a.stage_seed("sae"), b.stage_seed("sae"));
    }
}
