//! Sparse-autoencoder token clustering and cluster-transition rewards for
//! reasoning traces.
//!
//! The pipeline runs in stages:
//!
//! 1. [`corpus`]: token embeddings (`EMB1`) plus a sequence manifest, or a
//!    synthetic Markov-chain corpus with known latent states.
//! 2. [`sae`]: a TopK sparse autoencoder turns each embedding into a
//!    `k`-sparse latent code.
//! 3. [`cluster`]: spherical k-means groups the codes; each token gets a
//!    cluster id.
//! 4. [`graph`]: counts cluster-to-cluster transitions over the reference
//!    sequences; the reward of a sequence sums the weights it traverses.
//! 5. [`policy`]: temperature-controlled walks over the graph trace the
//!    exploit/explore trade-off.
//! 6. [`metrics`]: entropy, DTW, and KL divergence of consecutive-token
//!    similarity distributions across original/correct/incorrect groups.

mod binio;
pub mod cli;
pub mod cluster;
pub mod config;
pub mod corpus;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod policy;
pub mod sae;
pub mod seed;
pub mod sparse;

pub use cluster::{AssignedSequence, ClusterModel};
pub use config::RunConfig;
pub use corpus::{EmbeddingStore, SequenceManifest};
pub use error::{Error, Result};
pub use graph::ClusterGraph;
pub use sae::{SaeConfig, SaeModel};
pub use sparse::SparseVector;
