//! Pipeline stages behind the `tracegraph` subcommands.
//!
//! Each `cmd_*` reads its inputs from the paths in a [`RunConfig`], checks
//! artifact header dimensions against the config, and writes its outputs.
//! Identical config and inputs produce byte-identical outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::cluster::{self, AssignedSequence, ClusterModel};
use crate::config::{RunConfig, Selection};
use crate::corpus::{self, Dataset, Label, SequenceBatch, SequenceKind, SequenceManifest, StatePath, SyntheticCorpus, SyntheticSpec};
use crate::error::{Error, Result};
use crate::graph::{self, ClusterGraph};
use crate::metrics::{self, MetricReport, ReportInputs};
use crate::policy::{self, SweepRow};
use crate::sae::{self, SaeModel};
use crate::sparse::SparseVector;

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn header_mismatch(what: &str, path: &Path, config_key: &str, expected: usize, found: usize) -> Error {
    Error::Mismatch {
        what: format!("{what} in {} vs config {config_key}", path.display()),
        expected: expected as u64,
        found: found as u64,
    }
}

/// The generator spec and batch layout implied by the config.
pub fn synthetic_corpus(cfg: &RunConfig) -> Result<SyntheticCorpus> {
    let s = &cfg.synthetic;
    let spec = SyntheticSpec::random_skewed(s.num_states, s.dim, s.decay, s.noise_scale, cfg.stage_seed("synthetic"));
    if !(0.0..=1.0).contains(&s.repeat_prob) {
        return Err(Error::Config("synthetic.repeat_prob must lie in [0, 1]".into()));
    }
    let batch = |prefix: &str, dataset, label, kind, count, len| SequenceBatch {
        id_prefix: prefix.into(),
        dataset,
        label,
        kind,
        count,
        len,
    };
    let repeat_ppm = (s.repeat_prob * 1e6).round() as u32;
    corpus::generate_batches(
        &spec,
        &[
            batch("ref", Dataset::Reference, None, SequenceKind::Chain, s.reference_sequences, s.seq_len),
            batch("correct", Dataset::Other, Some(Label::Correct), SequenceKind::Chain, s.correct_sequences, s.seq_len),
            batch(
                "incorrect",
                Dataset::Other,
                Some(Label::Incorrect),
                SequenceKind::Repetitive { repeat_ppm },
                s.incorrect_sequences,
                s.incorrect_len,
            ),
            batch("random", Dataset::Other, None, SequenceKind::Uniform, s.random_sequences, s.seq_len),
        ],
    )
}

pub fn cmd_gen_synthetic(cfg: &RunConfig) -> Result<SyntheticCorpus> {
    let corpus = synthetic_corpus(cfg)?;
    let emb = cfg.path(&cfg.paths.embeddings);
    ensure_parent(&emb)?;
    corpus::write_embeddings(&corpus.store, &emb)?;
    let manifest = cfg.path(&cfg.paths.manifest);
    ensure_parent(&manifest)?;
    corpus::write_manifest(&corpus.manifest, &manifest)?;
    let states = cfg.path(&cfg.paths.true_states);
    ensure_parent(&states)?;
    corpus::write_jsonl(&states, &corpus.true_states)?;
    info!(
        "stage=gen-synthetic sequences={} tokens={} dim={}",
        corpus.manifest.len(),
        corpus.store.num_tokens(),
        corpus.store.dim()
    );
    Ok(corpus)
}

pub fn read_true_states(path: &Path) -> Result<Vec<StatePath>> {
    corpus::read_jsonl(path)
}

fn load_embeddings(cfg: &RunConfig) -> Result<corpus::EmbeddingStore> {
    let path = cfg.path(&cfg.paths.embeddings);
    let store = corpus::read_embeddings(&path)?;
    if store.dim() != cfg.sae.input_dim {
        return Err(header_mismatch("embedding dim (d)", &path, "sae.input_dim", cfg.sae.input_dim, store.dim()));
    }
    Ok(store)
}

fn load_manifest(cfg: &RunConfig) -> Result<SequenceManifest> {
    corpus::read_manifest(&cfg.path(&cfg.paths.manifest))
}

fn load_checkpoint(cfg: &RunConfig) -> Result<SaeModel> {
    let path = cfg.path(&cfg.paths.checkpoint);
    let model = sae::read_checkpoint(&path)?;
    let shape = model.shape();
    for (what, key, expected, found) in [
        ("input dim (d)", "sae.input_dim", cfg.sae.input_dim, shape.input_dim),
        ("latent dim (n)", "sae.latent_dim", cfg.sae.latent_dim, shape.latent_dim),
        ("top-k (k)", "sae.top_k", cfg.sae.top_k, shape.top_k),
    ] {
        if expected != found {
            return Err(header_mismatch(what, &path, key, expected, found));
        }
    }
    Ok(model)
}

fn load_centroids(cfg: &RunConfig) -> Result<ClusterModel> {
    let path = cfg.path(&cfg.paths.centroids);
    let model = cluster::read_centroids(&path)?;
    if model.num_clusters() != cfg.cluster.num_clusters {
        return Err(header_mismatch("cluster count (K)", &path, "cluster.num_clusters", cfg.cluster.num_clusters, model.num_clusters()));
    }
    if model.dim() != cfg.sae.latent_dim {
        return Err(header_mismatch("centroid dim (n)", &path, "sae.latent_dim", cfg.sae.latent_dim, model.dim()));
    }
    Ok(model)
}

fn load_graph(cfg: &RunConfig) -> Result<ClusterGraph> {
    let path = cfg.path(&cfg.paths.graph);
    let g = graph::read_graph(&path)?;
    if g.num_clusters() != cfg.cluster.num_clusters {
        return Err(header_mismatch("cluster count (K)", &path, "cluster.num_clusters", cfg.cluster.num_clusters, g.num_clusters()));
    }
    Ok(g)
}

/// Assignments, checked to line up with the manifest entry by entry.
fn load_assignments(cfg: &RunConfig, manifest: &SequenceManifest) -> Result<Vec<AssignedSequence>> {
    let path = cfg.path(&cfg.paths.assignments);
    let assigned: Vec<AssignedSequence> = corpus::read_jsonl(&path)?;
    if assigned.len() != manifest.len() {
        return Err(Error::mismatch(format!("sequence count in {}", path.display()), manifest.len(), assigned.len()));
    }
    for (a, e) in assigned.iter().zip(&manifest.entries) {
        if a.id != e.id || a.clusters.len() as u64 != e.len {
            return Err(Error::Invalid(format!("{}: assignment {:?} does not match manifest entry {:?}", path.display(), a.id, e.id)));
        }
    }
    Ok(assigned)
}

pub fn cmd_train_sae(cfg: &RunConfig) -> Result<sae::TrainReport> {
    let store = load_embeddings(cfg)?;
    let report = sae::train(&cfg.sae_config(), &store)?;
    let ckpt = cfg.path(&cfg.paths.checkpoint);
    ensure_parent(&ckpt)?;
    sae::write_checkpoint(&report.model, &ckpt)?;
    let mut log = String::from("epoch\tloss\n");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        writeln!(log, "{}\t{l}", e + 1).unwrap();
    }
    write_text(&cfg.path(&cfg.paths.train_log), &log)?;
    Ok(report)
}

fn sparse_corpus(cfg: &RunConfig) -> Result<(SequenceManifest, Vec<Vec<SparseVector>>)> {
    let store = load_embeddings(cfg)?;
    let manifest = load_manifest(cfg)?;
    let model = load_checkpoint(cfg)?;
    let sparse = sae::extract_sparse(&model, &store, &manifest)?;
    Ok((manifest, sparse))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub fit: cluster::ClusterFit,
    /// Flat token indices (manifest order) the centroids were fitted on.
    pub sample: Vec<usize>,
    pub assigned: Vec<AssignedSequence>,
}

pub fn cmd_cluster(cfg: &RunConfig) -> Result<ClusterSummary> {
    let (manifest, sparse) = sparse_corpus(cfg)?;
    let flat: Vec<&SparseVector> = sparse.iter().flatten().collect();
    let sample = cluster::sample_subset(flat.len(), cfg.cluster.sample_size, cfg.stage_seed("cluster-sample"));
    let vectors: Vec<SparseVector> = sample.iter().map(|&i| flat[i].clone()).collect();
    let fit = cluster::fit(&vectors, &cfg.fit_params())?;
    info!(
        "stage=cluster k={} sample={} iterations={} inertia={:.6} reseeds={}",
        fit.model.num_clusters(),
        vectors.len(),
        fit.history.len(),
        fit.model.inertia,
        fit.reseeds
    );
    let path = cfg.path(&cfg.paths.centroids);
    ensure_parent(&path)?;
    cluster::write_centroids(&fit.model, &path)?;
    let assigned = cluster::assign_corpus(&fit.model, &sparse, &manifest)?;
    let out = cfg.path(&cfg.paths.assignments);
    ensure_parent(&out)?;
    corpus::write_jsonl(&out, &assigned)?;
    Ok(ClusterSummary { fit, sample, assigned })
}

pub fn cmd_build_graph(cfg: &RunConfig) -> Result<ClusterGraph> {
    let manifest = load_manifest(cfg)?;
    let assigned = load_assignments(cfg, &manifest)?;
    let g = graph::build_graph(&assigned, &manifest, cfg.cluster.num_clusters)?;
    if !manifest.entries.iter().any(|e| e.dataset == Dataset::Reference) {
        warn!("stage=build-graph no reference-tagged sequences; graph is empty");
    }
    info!("stage=build-graph edges={} transitions={}", g.num_edges(), g.total_transitions());
    let path = cfg.path(&cfg.paths.graph);
    ensure_parent(&path)?;
    graph::write_graph(&g, &path)?;
    Ok(g)
}

/// Writes the graph as TSV to `out` (default: `paths.graph_tsv`).
pub fn cmd_export_graph(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    let g = load_graph(cfg)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.path(&cfg.paths.graph_tsv));
    write_text(&path, &g.to_tsv())?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub id: String,
    pub dataset: Dataset,
    pub label: Option<Label>,
    pub len: u64,
    pub reward: u64,
    pub per_token_reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMean {
    pub tag: String,
    pub count: usize,
    pub mean_reward: f64,
    pub mean_per_token_reward: f64,
}

fn dataset_name(d: Dataset) -> &'static str {
    match d {
        Dataset::Reference => "reference",
        Dataset::Other => "other",
    }
}

fn label_name(l: Option<Label>) -> &'static str {
    match l {
        Some(Label::Correct) => "correct",
        Some(Label::Incorrect) => "incorrect",
        None => "-",
    }
}

/// Means per dataset tag and per `dataset:label` subgroup, sorted by tag.
/// Unlabeled `other` rows form the `other:unlabeled` subgroup.
pub fn score_means(rows: &[ScoreRow]) -> Vec<ScoreMean> {
    let mut acc: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    for r in rows {
        let d = dataset_name(r.dataset);
        let mut tags = vec![d.to_string()];
        match (r.dataset, r.label) {
            (_, Some(_)) => tags.push(format!("{d}:{}", label_name(r.label))),
            (Dataset::Other, None) => tags.push(format!("{d}:unlabeled")),
            (Dataset::Reference, None) => {}
        }
        for tag in tags {
            let e = acc.entry(tag).or_default();
            e.0 += 1;
            e.1 += r.reward as f64;
            e.2 += r.per_token_reward;
        }
    }
    acc.into_iter()
        .map(|(tag, (count, r, p))| ScoreMean {
            tag,
            count,
            mean_reward: r / count as f64,
            mean_per_token_reward: p / count as f64,
        })
        .collect()
}

pub fn cmd_score(cfg: &RunConfig, select: Option<Selection>) -> Result<(Vec<ScoreRow>, Vec<ScoreMean>)> {
    let g = load_graph(cfg)?;
    let manifest = load_manifest(cfg)?;
    let assigned = load_assignments(cfg, &manifest)?;
    let select = select.unwrap_or(cfg.score.select);
    let mut rows = Vec::new();
    for (e, a) in manifest.entries.iter().zip(&assigned) {
        let keep = match select {
            Selection::All => true,
            Selection::Reference => e.dataset == Dataset::Reference,
            Selection::Other => e.dataset == Dataset::Other,
        };
        if !keep {
            continue;
        }
        rows.push(ScoreRow {
            id: e.id.clone(),
            dataset: e.dataset,
            label: e.label,
            len: e.len,
            reward: g.reward(a)?,
            per_token_reward: g.per_token_reward(a)?,
        });
    }
    let means = score_means(&rows);

    let mut table = String::from("id\tdataset\tlabel\tlen\treward\tper_token_reward\n");
    for r in &rows {
        writeln!(
            table,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.id,
            dataset_name(r.dataset),
            label_name(r.label),
            r.len,
            r.reward,
            r.per_token_reward
        )
        .unwrap();
    }
    write_text(&cfg.path(&cfg.paths.scores), &table)?;
    let mut summary = String::from("tag\tcount\tmean_reward\tmean_per_token_reward\n");
    for m in &means {
        writeln!(summary, "{}\t{}\t{}\t{}", m.tag, m.count, m.mean_reward, m.mean_per_token_reward).unwrap();
    }
    write_text(&cfg.path(&cfg.paths.score_means), &summary)?;
    for m in &means {
        info!("stage=score tag={} count={} mean_per_token_reward={:.4}", m.tag, m.count, m.mean_per_token_reward);
    }
    Ok((rows, means))
}

pub fn cmd_metrics(cfg: &RunConfig) -> Result<MetricReport> {
    let (manifest, sparse) = sparse_corpus(cfg)?;
    let assigned = load_assignments(cfg, &manifest)?;
    let model = load_centroids(cfg)?;
    let analysis = metrics::analyze(
        ReportInputs {
            manifest: &manifest,
            assigned: &assigned,
            sparse: &sparse,
            model: &model,
        },
        &cfg.report_params(),
    )?;
    write_text(&cfg.path(&cfg.paths.report), &analysis.report.to_json())?;
    let dir = cfg.path(&cfg.paths.histogram_dir);
    for (kind, hists) in [("sae", &analysis.histograms.sae), ("centroid", &analysis.histograms.centroid)] {
        for (group, h) in crate::corpus::Group::ALL.iter().zip(hists.iter()) {
            if let Some(h) = h {
                write_text(&dir.join(format!("{kind}_{}.tsv", group.name())), &h.to_tsv())?;
            }
        }
    }
    for m in &analysis.report.missing {
        warn!("stage=metrics missing {m}");
    }
    Ok(analysis.report)
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    let g = load_graph(cfg)?;
    let rows = policy::sweep(&g, &cfg.sweep.temperatures, &cfg.policy_config())?;
    for r in &rows {
        info!(
            "stage=sweep tau={} mean_per_token_reward={:.4} entropy={:.4}",
            r.tau, r.mean_per_token_reward, r.entropy
        );
    }
    write_text(&cfg.path(&cfg.paths.sweep), &policy::sweep_tsv(&rows))?;
    Ok(rows)
}
