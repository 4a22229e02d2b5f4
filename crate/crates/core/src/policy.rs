//! Exploit/explore walks over a cluster graph.
//!
//! From cluster `i` the walker moves to successor `j` with probability
//! proportional to `w_ij^(1/tau)`. `tau = 0` is the greedy walk that always
//! takes the heaviest edge; large `tau` approaches a uniform choice among
//! the outgoing edges. A cluster without outgoing edges ends the walk.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::AssignedSequence;
use crate::error::{Error, Result};
use crate::graph::ClusterGraph;
use crate::metrics::{cluster_entropy_in, EntropyUnit};
use crate::seed::{self, StageRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartRule {
    /// Pick the start cluster with probability proportional to its total
    /// outgoing weight.
    #[serde(rename = "sample-by-outdegree")]
    SampleByOutdegree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Start {
    Cluster(u32),
    Rule(StartRule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub temperature: f64,
    pub max_len: usize,
    pub start: Start,
    pub seed: u64,
    pub num_trajectories: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_len: 64,
            start: Start::Rule(StartRule::SampleByOutdegree),
            seed: 0,
            num_trajectories: 1000,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::Invalid(format!("temperature {} must be finite and >= 0", self.temperature)));
        }
        if self.max_len == 0 || self.num_trajectories == 0 {
            return Err(Error::Invalid("max_len and num_trajectories must be positive".into()));
        }
        Ok(())
    }
}

/// Picks a successor from `(dst, weight)` pairs sorted by `dst`.
fn choose<R: Rng>(succ: &[(u32, u64)], tau: f64, rng: &mut R) -> Option<u32> {
    match succ {
        [] => None,
        [(only, _)] => Some(*only),
        _ if tau == 0.0 => {
            let mut best = succ[0];
            for &s in &succ[1..] {
                if s.1 > best.1 {
                    best = s;
                }
            }
            Some(best.0)
        }
        _ => {
            let logits: Vec<f64> = succ.iter().map(|&(_, w)| (w as f64).ln() / tau).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = probs.iter().sum();
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            for (&(dst, _), p) in succ.iter().zip(&probs) {
                acc += p;
                if target < acc {
                    return Some(dst);
                }
            }
            succ.last().map(|&(d, _)| d)
        }
    }
}

/// One move of the walk; `Ok(None)` means the walk halts.
pub fn step<R: Rng>(g: &ClusterGraph, current: u32, tau: f64, rng: &mut R) -> Result<Option<u32>> {
    if current as usize >= g.num_clusters() {
        return Err(Error::out_of_range("cluster id", current as usize, g.num_clusters()));
    }
    let succ: Vec<(u32, u64)> = g.successors(current).collect();
    Ok(choose(&succ, tau, rng))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    pub trajectories: Vec<AssignedSequence>,
    pub rewards: Vec<u64>,
    pub mean_reward: f64,
    pub mean_per_token_reward: f64,
    /// Pooled cluster-frequency entropy (nats) over all trajectories.
    pub cluster_entropy: f64,
}

fn start_cluster(g: &ClusterGraph, start: Start, out_weights: &[u64], rng: &mut StageRng) -> Result<u32> {
    match start {
        Start::Cluster(c) => {
            if c as usize >= g.num_clusters() {
                return Err(Error::out_of_range("start cluster", c as usize, g.num_clusters()));
            }
            Ok(c)
        }
        Start::Rule(StartRule::SampleByOutdegree) => {
            let total: u64 = out_weights.iter().sum();
            let mut target = rng.random_range(0..total);
            for (c, &w) in out_weights.iter().enumerate() {
                if target < w {
                    return Ok(c as u32);
                }
                target -= w;
            }
            unreachable!("target is below the total out-weight")
        }
    }
}

/// Runs `num_trajectories` independent walks, each from its own derived
/// seed, and aggregates reward and diversity.
pub fn rollout(g: &ClusterGraph, cfg: &PolicyConfig) -> Result<TrajectoryReport> {
    cfg.validate()?;
    if g.is_empty() {
        return Err(Error::Empty("cannot roll out on a graph without edges".into()));
    }
    let k = g.num_clusters();
    let adjacency: Vec<Vec<(u32, u64)>> = (0..k as u32).map(|c| g.successors(c).collect()).collect();
    let out_weights: Vec<u64> = adjacency.iter().map(|s| s.iter().map(|&(_, w)| w).sum()).collect();

    let mut trajectories = Vec::with_capacity(cfg.num_trajectories);
    let mut rewards = Vec::with_capacity(cfg.num_trajectories);
    let mut reward_sum = 0.0;
    let mut per_token_sum = 0.0;
    for t in 0..cfg.num_trajectories {
        let mut rng = seed::rng(seed::derive_indexed(cfg.seed, t as u64));
        let mut current = start_cluster(g, cfg.start, &out_weights, &mut rng)?;
        let mut path = vec![current];
        let mut reward = 0u64;
        while path.len() < cfg.max_len {
            let succ = &adjacency[current as usize];
            let Some(next) = choose(succ, cfg.temperature, &mut rng) else {
                break;
            };
            reward += succ.iter().find(|&&(d, _)| d == next).map(|&(_, w)| w).unwrap_or(0);
            path.push(next);
            current = next;
        }
        reward_sum += reward as f64;
        per_token_sum += reward as f64 / path.len() as f64;
        rewards.push(reward);
        trajectories.push(AssignedSequence {
            id: format!("traj-{t:05}"),
            clusters: path,
        });
    }
    let n = cfg.num_trajectories as f64;
    let cluster_entropy = cluster_entropy_in(&trajectories, EntropyUnit::Nats)?;
    Ok(TrajectoryReport {
        trajectories,
        rewards,
        mean_reward: reward_sum / n,
        mean_per_token_reward: per_token_sum / n,
        cluster_entropy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub mean_reward: f64,
    pub mean_per_token_reward: f64,
    pub entropy: f64,
}

/// Seed used for the rollout at temperature `tau`.
pub fn sweep_seed(base: u64, tau: f64) -> u64 {
    seed::derive_indexed(seed::derive(base, "sweep"), tau.to_bits())
}

/// One rollout per temperature, in the given order.
pub fn sweep(g: &ClusterGraph, temperatures: &[f64], base: &PolicyConfig) -> Result<Vec<SweepRow>> {
    if temperatures.is_empty() {
        return Err(Error::Empty("temperature list".into()));
    }
    temperatures
        .iter()
        .map(|&tau| {
            let cfg = PolicyConfig {
                temperature: tau,
                seed: sweep_seed(base.seed, tau),
                ..base.clone()
            };
            let r = rollout(g, &cfg)?;
            Ok(SweepRow {
                tau,
                mean_reward: r.mean_reward,
                mean_per_token_reward: r.mean_per_token_reward,
                entropy: r.cluster_entropy,
            })
        })
        .collect()
}

pub fn sweep_tsv(rows: &[SweepRow]) -> String {
    let mut out = String::from("tau\tmean_reward\tmean_per_token_reward\tentropy\n");
    for r in rows {
        writeln!(out, "{}\t{}\t{}\t{}", r.tau, r.mean_reward, r.mean_per_token_reward, r.entropy).unwrap();
    }
    out
}
