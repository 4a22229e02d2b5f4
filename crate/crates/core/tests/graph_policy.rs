mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use tracegraph::corpus::Dataset;
use tracegraph::graph::{build_graph, ClusterGraph};
use tracegraph::policy::{self, PolicyConfig, Start, StartRule};
use tracegraph::seed;

fn corpus_strategy() -> impl Strategy<Value = (u32, Vec<(Dataset, Vec<u32>)>)> {
    (1u32..8).prop_flat_map(|k| {
        let path = (prop::bool::weighted(0.7), prop::collection::vec(0..k, 1..15)).prop_map(|(r, p)| {
            (if r { Dataset::Reference } else { Dataset::Other }, p)
        });
        (Just(k), prop::collection::vec(path, 0..10))
    })
}

proptest! {
    #[test]
    fn weights_equal_direct_counts((k, paths) in corpus_strategy()) {
        let (manifest, assigned) = tagged_corpus(&paths);
        let g = build_graph(&assigned, &manifest, k as usize).unwrap();
        for i in 0..k {
            for j in 0..k {
                prop_assert_eq!(g.edge_weight(i, j).unwrap(), count_transitions(&paths, i, j));
            }
        }
        let total: u64 = g.edges().map(|(_, _, w)| w).sum();
        prop_assert_eq!(total, g.total_transitions());
        prop_assert!(g.edges().all(|(_, _, w)| w > 0));
    }

    #[test]
    fn graph_is_order_invariant((k, mut paths) in corpus_strategy(), seed_value in any::<u64>()) {
        let (manifest, assigned) = tagged_corpus(&paths);
        let g = build_graph(&assigned, &manifest, k as usize).unwrap();
        rand::seq::SliceRandom::shuffle(paths.as_mut_slice(), &mut seed::rng(seed_value));
        let (manifest, assigned) = tagged_corpus(&paths);
        prop_assert_eq!(build_graph(&assigned, &manifest, k as usize).unwrap(), g);
    }

    #[test]
    fn reward_is_additive_and_bounded((k, paths) in corpus_strategy(), p in prop::collection::vec(0u32..8, 1..12), q in prop::collection::vec(0u32..8, 1..12)) {
        let (manifest, assigned) = tagged_corpus(&paths);
        let g = build_graph(&assigned, &manifest, k as usize).unwrap();
        let p: Vec<u32> = p.into_iter().map(|c| c % k).collect();
        let q: Vec<u32> = q.into_iter().map(|c| c % k).collect();
        let joined: Vec<u32> = p.iter().chain(&q).copied().collect();
        let junction = g.edge_weight(*p.last().unwrap(), q[0]).unwrap();
        prop_assert_eq!(
            g.reward_of(&joined).unwrap(),
            g.reward_of(&p).unwrap() + g.reward_of(&q).unwrap() + junction
        );
        let manual: u64 = p.windows(2).map(|w| count_transitions(&paths, w[0], w[1])).sum();
        prop_assert_eq!(g.reward_of(&p).unwrap(), manual);
        prop_assert!(g.reward_of(&p).unwrap() <= (p.len() as u64 - 1) * g.max_weight());
    }

    #[test]
    fn serialized_forms_rebuild_the_graph((k, paths) in corpus_strategy()) {
        let (manifest, assigned) = tagged_corpus(&paths);
        let g = build_graph(&assigned, &manifest, k as usize).unwrap();
        prop_assert_eq!(&ClusterGraph::from_bytes(&g.to_bytes()).unwrap(), &g);
        let from_tsv = ClusterGraph::from_tsv(&g.to_tsv()).unwrap();
        prop_assert_eq!(from_tsv.to_bytes(), g.to_bytes());
    }
}

fn walk_config(tau: f64, start: Start, n: usize, seed_value: u64) -> PolicyConfig {
    PolicyConfig {
        temperature: tau,
        max_len: 12,
        start,
        seed: seed_value,
        num_trajectories: n,
    }
}

#[test]
fn boltzmann_step_frequencies_match_analytic_probabilities() {
    let g = ClusterGraph::from_edges(4, [(0, 1, 5), (0, 2, 1), (0, 3, 3)]).unwrap();
    let draws = 100_000;
    for tau in [0.5, 1.0, 2.0] {
        let mut rng = seed::rng(policy::sweep_seed(17, tau));
        let mut counts = [0u64; 4];
        for _ in 0..draws {
            counts[policy::step(&g, 0, tau, &mut rng).unwrap().unwrap() as usize] += 1;
        }
        let weights = [5.0f64, 1.0, 3.0].map(|w| w.powf(1.0 / tau));
        let total: f64 = weights.iter().sum();
        // Pearson statistic; 9.21 is the 0.99 quantile of chi-square with 2 dof.
        let chi2: f64 = weights
            .iter()
            .zip(&counts[1..])
            .map(|(w, &c)| {
                let expected = draws as f64 * w / total;
                (c as f64 - expected).powi(2) / expected
            })
            .sum();
        assert!(chi2 < 9.21, "tau {tau}: chi-square {chi2}, counts {counts:?}");
    }

    let g = ClusterGraph::from_edges(3, [(0, 1, 5), (0, 2, 1)]).unwrap();
    let mut rng = seed::rng(99);
    let hits = (0..draws).filter(|_| policy::step(&g, 0, 1.0, &mut rng).unwrap() == Some(1)).count();
    assert!((hits as f64 / draws as f64 - 5.0 / 6.0).abs() <= 0.01);
}

#[test]
fn trajectory_rewards_recompute_exactly() {
    let mut rng = seed::rng(4);
    let mut edges = std::collections::BTreeMap::new();
    for _ in 0..30 {
        edges.insert((rng.random_range(0..6u32), rng.random_range(0..6u32)), rng.random_range(1..20u64));
    }
    let edges = edges.into_iter().map(|((a, b), w)| (a, b, w));
    let g = ClusterGraph::from_edges(6, edges).unwrap();
    for tau in [0.0, 0.7, 3.0] {
        let cfg = walk_config(tau, Start::Rule(StartRule::SampleByOutdegree), 200, 5);
        let report = policy::rollout(&g, &cfg).unwrap();
        let mut sum = 0.0;
        for (t, r) in report.trajectories.iter().zip(&report.rewards) {
            assert!(!t.clusters.is_empty() && t.clusters.len() <= cfg.max_len);
            assert_eq!(g.reward(t).unwrap(), *r);
            sum += *r as f64;
        }
        assert!((report.mean_reward - sum / 200.0).abs() < 1e-9);
        let paths: Vec<Vec<u32>> = report.trajectories.iter().map(|t| t.clusters.clone()).collect();
        assert!((report.cluster_entropy - pooled_entropy(&paths)).abs() < 1e-12);
        assert_eq!(policy::rollout(&g, &cfg).unwrap(), report);
    }
}

#[test]
fn greedy_batches_repeat_one_path() {
    let g = ClusterGraph::from_edges(5, [(0, 1, 4), (1, 2, 7), (1, 3, 7), (2, 0, 1), (3, 4, 2)]).unwrap();
    let report = policy::rollout(&g, &walk_config(0.0, Start::Cluster(0), 50, 3)).unwrap();
    let first = &report.trajectories[0].clusters;
    assert_eq!(first, &vec![0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2]);
    assert!(report.trajectories.iter().all(|t| &t.clusters == first));
    assert!((report.cluster_entropy - pooled_entropy(std::slice::from_ref(first))).abs() < 1e-12);
}

#[test]
fn duplicate_temperatures_give_identical_rows() {
    let g = ClusterGraph::from_edges(3, [(0, 1, 5), (0, 2, 1), (1, 0, 2), (2, 0, 2)]).unwrap();
    let rows = policy::sweep(&g, &[1.0, 1.0, 0.0], &walk_config(0.0, Start::Cluster(0), 100, 8)).unwrap();
    assert_eq!(rows[0], rows[1]);
    assert_eq!(rows[2].tau, 0.0);
}
