//! TopK sparse autoencoder.
//!
//! ```text
//! u    = W_enc (x - b_pre) + b_enc        (n)
//! z    = TopK(u, k)
//! x_hat = W_dec z + b_pre                 (d)
//! loss = mean_b || x_b - x_hat_b ||^2
//! ```
//!
//! Parameters are stored as `f32` (the checkpoint width); every forward
//! and backward pass accumulates in `f64`. Gradients treat the TopK mask
//! as constant, so only the `k` selected latents receive signal.

use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader, Writer};
use crate::corpus::{EmbeddingStore, SequenceManifest};
use crate::error::{Error, Result};
use crate::seed;
use crate::sparse::{topk_indices, SparseVector};

const SAE_MAGIC: &[u8; 4] = b"SAE1";
const SAE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeConfig {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub top_k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SaeConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            latent_dim: 8192,
            top_k: 32,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl SaeConfig {
    pub fn shape(&self) -> SaeShape {
        SaeShape {
            input_dim: self.input_dim,
            latent_dim: self.latent_dim,
            top_k: self.top_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape().validate()?;
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Invalid("learning_rate must be a positive finite real".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// The dimensions a checkpoint carries in its header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SaeShape {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub top_k: usize,
}

impl SaeShape {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.top_k == 0 {
            return Err(Error::Invalid("SAE dimensions and k must be positive".into()));
        }
        if self.top_k > self.latent_dim {
            return Err(Error::Invalid(format!(
                "top_k {} exceeds latent_dim {}",
                self.top_k, self.latent_dim
            )));
        }
        if self.input_dim > self.latent_dim {
            return Err(Error::Invalid(format!(
                "latent_dim {} must be at least input_dim {} (overcomplete dictionary)",
                self.latent_dim, self.input_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    shape: SaeShape,
    /// `n x d`, row-major.
    pub w_enc: Vec<f32>,
    pub b_enc: Vec<f32>,
    /// `d x n`, row-major.
    pub w_dec: Vec<f32>,
    pub b_pre: Vec<f32>,
}

/// Gradients of the batch-mean reconstruction loss, laid out like the
/// parameters they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeGradients {
    pub w_enc: Vec<f64>,
    pub b_enc: Vec<f64>,
    pub w_dec: Vec<f64>,
    pub b_pre: Vec<f64>,
}

impl SaeGradients {
    fn zeros(shape: SaeShape) -> Self {
        let (d, n) = (shape.input_dim, shape.latent_dim);
        Self {
            w_enc: vec![0.0; n * d],
            b_enc: vec![0.0; n],
            w_dec: vec![0.0; d * n],
            b_pre: vec![0.0; d],
        }
    }

    fn all_finite(&self) -> bool {
        [&self.w_enc, &self.b_enc, &self.w_dec, &self.b_pre]
            .iter()
            .all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Per-sample forward state kept for the backward pass.
struct Forward {
    centered: Vec<f64>,
    preact: Vec<f64>,
    active: Vec<usize>,
    recon: Vec<f64>,
}

impl SaeModel {
    /// Builds a model from explicit parameters.
    pub fn from_parts(shape: SaeShape, w_enc: Vec<f32>, b_enc: Vec<f32>, w_dec: Vec<f32>, b_pre: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        let (d, n) = (shape.input_dim, shape.latent_dim);
        for (what, len, expected) in [
            ("W_enc length", w_enc.len(), n * d),
            ("b_enc length", b_enc.len(), n),
            ("W_dec length", w_dec.len(), d * n),
            ("b_pre length", b_pre.len(), d),
        ] {
            if len != expected {
                return Err(Error::mismatch(what, expected, len));
            }
        }
        binio::check_finite("W_enc", &w_enc)?;
        binio::check_finite("b_enc", &b_enc)?;
        binio::check_finite("W_dec", &w_dec)?;
        binio::check_finite("b_pre", &b_pre)?;
        Ok(Self {
            shape,
            w_enc,
            b_enc,
            w_dec,
            b_pre,
        })
    }

    /// Uniform `W_enc` scaled by `1/sqrt(d)`, `W_dec = W_enc^T`, `b_enc = 0`,
    /// `b_pre` set to `data_mean` (or zero).
    pub fn init(config: &SaeConfig, data_mean: Option<&[f64]>) -> Result<Self> {
        let shape = config.shape();
        shape.validate()?;
        let (d, n) = (shape.input_dim, shape.latent_dim);
        let mut rng = seed::rng(seed::derive(config.seed, "sae-init"));
        let scale = 1.0 / (d as f64).sqrt();
        let w_enc: Vec<f32> = (0..n * d)
            .map(|_| (rng.random_range(-1.0..1.0) * scale) as f32)
            .collect();
        let mut w_dec = vec![0.0f32; d * n];
        for i in 0..n {
            for j in 0..d {
                w_dec[j * n + i] = w_enc[i * d + j];
            }
        }
        let b_pre = match data_mean {
            Some(mean) if mean.len() != d => return Err(Error::mismatch("data mean length", d, mean.len())),
            Some(mean) => mean.iter().map(|&v| v as f32).collect(),
            None => vec![0.0; d],
        };
        Self::from_parts(shape, w_enc, vec![0.0; n], w_dec, b_pre)
    }

    pub fn shape(&self) -> SaeShape {
        self.shape
    }

    fn check_input(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.shape.input_dim {
            return Err(Error::mismatch("input dim", self.shape.input_dim, x.len()));
        }
        binio::check_finite("SAE input", x)
    }

    /// Dense pre-activation `W_enc (x - b_pre) + b_enc`.
    pub fn preactivation(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.preactivation_unchecked(&self.center(x)))
    }

    fn center(&self, x: &[f32]) -> Vec<f64> {
        x.iter().zip(&self.b_pre).map(|(&a, &b)| f64::from(a) - f64::from(b)).collect()
    }

    fn preactivation_unchecked(&self, centered: &[f64]) -> Vec<f64> {
        let d = self.shape.input_dim;
        self.w_enc
            .chunks_exact(d)
            .zip(&self.b_enc)
            .map(|(row, &b)| row.iter().zip(centered).map(|(&w, &c)| f64::from(w) * c).sum::<f64>() + f64::from(b))
            .collect()
    }

    fn forward(&self, x: &[f32]) -> Forward {
        let (d, n) = (self.shape.input_dim, self.shape.latent_dim);
        let centered = self.center(x);
        let preact = self.preactivation_unchecked(&centered);
        let active = topk_indices(&preact, self.shape.top_k).expect("k <= n by construction");
        let mut recon: Vec<f64> = self.b_pre.iter().map(|&b| f64::from(b)).collect();
        for &i in &active {
            let a = preact[i];
            for (j, r) in recon.iter_mut().enumerate().take(d) {
                *r += a * f64::from(self.w_dec[j * n + i]);
            }
        }
        Forward {
            centered,
            preact,
            active,
            recon,
        }
    }

    /// Sparse code of `x`: the `k` selected latents, explicit zeros included.
    pub fn encode(&self, x: &[f32]) -> Result<SparseVector> {
        self.check_input(x)?;
        let preact = self.preactivation_unchecked(&self.center(x));
        let active = topk_indices(&preact, self.shape.top_k)?;
        SparseVector::new(
            self.shape.latent_dim,
            active.into_iter().map(|i| (i as u32, preact[i] as f32)).collect(),
        )
    }

    /// `W_dec z + b_pre`, touching only the active columns.
    pub fn decode(&self, z: &SparseVector) -> Result<Vec<f64>> {
        let n = self.shape.latent_dim;
        if z.dim() != n {
            return Err(Error::mismatch("sparse code dim", n, z.dim()));
        }
        let mut out: Vec<f64> = self.b_pre.iter().map(|&b| f64::from(b)).collect();
        for (i, a) in z.iter() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += f64::from(a) * f64::from(self.w_dec[j * n + i]);
            }
        }
        Ok(out)
    }

    /// Batch mean of squared reconstruction error.
    pub fn reconstruction_loss(&self, batch: &[&[f32]]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("reconstruction loss batch".into()));
        }
        let mut total = 0.0;
        for x in batch {
            self.check_input(x)?;
            let f = self.forward(x);
            total += squared_error(x, &f.recon);
        }
        Ok(total / batch.len() as f64)
    }

    /// Loss and analytic gradients over `batch`.
    pub fn gradients(&self, batch: &[&[f32]]) -> Result<(f64, SaeGradients)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch".into()));
        }
        let (d, n) = (self.shape.input_dim, self.shape.latent_dim);
        let scale = 2.0 / batch.len() as f64;
        let mut g = SaeGradients::zeros(self.shape);
        let mut total = 0.0;
        for x in batch {
            self.check_input(x)?;
            let f = self.forward(x);
            total += squared_error(x, &f.recon);
            // dL/dx_hat
            let dr: Vec<f64> = f.recon.iter().zip(x.iter()).map(|(&r, &v)| scale * (r - f64::from(v))).collect();
            for (gb, &v) in g.b_pre.iter_mut().zip(&dr) {
                *gb += v;
            }
            for &i in &f.active {
                let a = f.preact[i];
                let mut du = 0.0;
                for j in 0..d {
                    g.w_dec[j * n + i] += dr[j] * a;
                    du += f64::from(self.w_dec[j * n + i]) * dr[j];
                }
                g.b_enc[i] += du;
                let row = &self.w_enc[i * d..(i + 1) * d];
                for j in 0..d {
                    g.w_enc[i * d + j] += du * f.centered[j];
                    g.b_pre[j] -= du * f64::from(row[j]);
                }
            }
        }
        Ok((total / batch.len() as f64, g))
    }

    /// One gradient-descent step. Returns the pre-update loss; on a
    /// non-finite gradient the model is left untouched.
    pub fn train_step(&mut self, batch: &[&[f32]], lr: f64) -> Result<f64> {
        let (loss, g) = self.gradients(batch)?;
        if !g.all_finite() || !loss.is_finite() {
            return Err(Error::NonFinite {
                what: "SAE gradient".into(),
                index: 0,
            });
        }
        let apply = |p: &mut [f32], g: &[f64]| {
            for (p, &g) in p.iter_mut().zip(g) {
                *p = (f64::from(*p) - lr * g) as f32;
            }
        };
        let mut next = self.clone();
        apply(&mut next.w_enc, &g.w_enc);
        apply(&mut next.b_enc, &g.b_enc);
        apply(&mut next.w_dec, &g.w_dec);
        apply(&mut next.b_pre, &g.b_pre);
        for (what, p) in [("W_enc", &next.w_enc), ("b_enc", &next.b_enc), ("W_dec", &next.w_dec), ("b_pre", &next.b_pre)] {
            binio::check_finite(what, p)?;
        }
        *self = next;
        Ok(loss)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(SAE_MAGIC)
            .u32(SAE_VERSION)
            .u32(self.shape.input_dim as u32)
            .u32(self.shape.latent_dim as u32)
            .u32(self.shape.top_k as u32)
            .f32s(&self.w_enc)
            .f32s(&self.b_enc)
            .f32s(&self.w_dec)
            .f32s(&self.b_pre);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new("SAE1", bytes);
        r.expect_magic(SAE_MAGIC)?;
        r.expect_version(SAE_VERSION)?;
        let shape = SaeShape {
            input_dim: r.u32()? as usize,
            latent_dim: r.u32()? as usize,
            top_k: r.u32()? as usize,
        };
        shape.validate()?;
        let (d, n) = (shape.input_dim as u64, shape.latent_dim as u64);
        let w_enc = r.f32_vec(n * d)?;
        let b_enc = r.f32_vec(n)?;
        let w_dec = r.f32_vec(d * n)?;
        let b_pre = r.f32_vec(d)?;
        r.finish()?;
        Self::from_parts(shape, w_enc, b_enc, w_dec, b_pre)
    }
}

fn squared_error(x: &[f32], recon: &[f64]) -> f64 {
    x.iter().zip(recon).map(|(&a, &b)| (f64::from(a) - b).powi(2)).sum()
}

pub fn read_checkpoint(path: &Path) -> Result<SaeModel> {
    SaeModel::from_bytes(&binio::read_file(path)?)
}

pub fn write_checkpoint(model: &SaeModel, path: &Path) -> Result<()> {
    binio::write_file(path, &model.to_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model: SaeModel,
    /// Mean pre-update minibatch loss for each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch gradient descent over shuffled tokens. Each epoch visits every
/// token once in `ceil(num_tokens / batch_size)` steps.
pub fn train(config: &SaeConfig, store: &EmbeddingStore) -> Result<TrainReport> {
    config.validate()?;
    if store.dim() != config.input_dim {
        return Err(Error::mismatch("embedding dim (d)", config.input_dim, store.dim()));
    }
    let mut model = SaeModel::init(config, Some(&store.mean()))?;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        return Ok(TrainReport { model, epoch_losses });
    }
    if store.num_tokens() == 0 {
        return Err(Error::Empty("training store has no tokens".into()));
    }
    let mut rng = seed::rng(seed::derive(config.seed, "sae-shuffle"));
    let mut order: Vec<usize> = (0..store.num_tokens()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&[f32]> = chunk.iter().map(|&t| store.row(t)).collect();
            sum += model.train_step(&batch, config.learning_rate)?;
            steps += 1;
        }
        let mean = sum / steps as f64;
        info!("stage=train-sae epoch={} steps={} loss={:.6e}", epoch + 1, steps, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainReport { model, epoch_losses })
}

/// Encodes every token, grouped per manifest sequence in manifest order.
pub fn extract_sparse(model: &SaeModel, store: &EmbeddingStore, manifest: &SequenceManifest) -> Result<Vec<Vec<SparseVector>>> {
    if store.dim() != model.shape.input_dim {
        return Err(Error::mismatch("embedding dim (d)", model.shape.input_dim, store.dim()));
    }
    manifest.check_bounds(store.num_tokens())?;
    manifest
        .entries
        .iter()
        .map(|e| e.range().map(|t| model.encode(store.row(t))).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(d: usize, n: usize, k: usize) -> SaeShape {
        SaeShape {
            input_dim: d,
            latent_dim: n,
            top_k: k,
        }
    }

    fn identity_model(d: usize) -> SaeModel {
        let mut eye = vec![0.0f32; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        SaeModel::from_parts(shape(d, d, d), eye.clone(), vec![0.0; d], eye, vec![0.0; d]).unwrap()
    }

    fn random_model(d: usize, n: usize, k: usize, seed_value: u64) -> SaeModel {
        let mut rng = seed::rng(seed_value);
        let mut v = |len: usize| -> Vec<f32> { (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect() };
        SaeModel::from_parts(shape(d, n, k), v(n * d), v(n), v(d * n), v(d)).unwrap()
    }

    #[test]
    fn identity_encoder_copies_input() {
        let m = identity_model(3);
        let z = m.encode(&[0.5, -2.0, 1.0]).unwrap();
        assert_eq!(z.to_dense(), vec![0.5, -2.0, 1.0]);
        assert_eq!(m.reconstruction_loss(&[&[0.5, -2.0, 1.0]]).unwrap(), 0.0);
    }

    #[test]
    fn centered_input_gives_zero_preactivation() {
        let mut m = random_model(2, 4, 2, 9);
        m.b_enc = vec![0.0; 4];
        let x = m.b_pre.clone();
        let z = m.encode(&x).unwrap();
        assert_eq!(z.indices(), &[0, 1]);
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn k1_selects_hand_computed_argmax() {
        // W_enc is 4x2; x - b_pre = [1, 2].
        let w_enc = vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 2.0];
        let m = SaeModel::from_parts(shape(2, 4, 1), w_enc, vec![0.0, 0.0, -0.5, 0.0], vec![0.0; 8], vec![0.5, 0.0]).unwrap();
        // u = [1, 2, 3 - 0.5, 3] -> argmax 3
        let z = m.encode(&[1.5, 2.0]).unwrap();
        assert_eq!(z.indices(), &[3]);
        assert_eq!(z.values(), &[3.0]);
    }

    #[test]
    fn decode_empty_and_unit_codes() {
        let m = random_model(3, 5, 2, 4);
        let empty = m.decode(&SparseVector::empty(5)).unwrap();
        assert_eq!(empty, m.b_pre.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());

        let mut m0 = m.clone();
        m0.b_pre = vec![0.0; 3];
        let unit = SparseVector::new(5, vec![(2, 1.0)]).unwrap();
        let col: Vec<f64> = (0..3).map(|j| f64::from(m.w_dec[j * 5 + 2])).collect();
        assert_eq!(m0.decode(&unit).unwrap(), col);
    }

    #[test]
    fn decode_matches_dense_matvec() {
        let m = random_model(4, 7, 3, 12);
        let z = SparseVector::new(7, vec![(1, 0.5), (4, -1.25), (6, 2.0)]).unwrap();
        let dense = z.to_dense();
        let got = m.decode(&z).unwrap();
        for j in 0..4 {
            let mut acc = f64::from(m.b_pre[j]);
            for i in 0..7 {
                acc += f64::from(m.w_dec[j * 7 + i]) * f64::from(dense[i]);
            }
            assert!((got[j] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_error_loss() {
        let m = SaeModel::from_parts(shape(2, 2, 1), vec![0.0; 4], vec![0.0; 2], vec![0.0; 4], vec![0.0; 2]).unwrap();
        assert_eq!(m.reconstruction_loss(&[&[1.0, 0.0]]).unwrap(), 1.0);
        assert!(matches!(m.reconstruction_loss(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = random_model(3, 5, 2, 1);
        assert!(matches!(m.encode(&[1.0, 2.0]), Err(Error::Mismatch { .. })));
        assert!(matches!(m.decode(&SparseVector::empty(4)), Err(Error::Mismatch { .. })));
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let mut m = random_model(3, 5, 2, 2);
        let before = m.clone();
        let x = [0.1f32, 0.2, -0.3];
        m.train_step(&[&x], 0.0).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut m = random_model(2, 3, 1, 2);
        m.w_dec = vec![f32::MAX; 6];
        let before = m.clone();
        let err = m.train_step(&[&[1e30, -1e30]], 1.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(m, before);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let m = random_model(3, 6, 2, 8);
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 20 + 4 * (18 + 6 + 18 + 3));
        let back = SaeModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        assert!(SaeModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn init_ties_decoder_to_encoder() {
        let cfg = SaeConfig {
            input_dim: 3,
            latent_dim: 6,
            top_k: 2,
            ..Default::default()
        };
        let m = SaeModel::init(&cfg, Some(&[1.0, 2.0, 3.0])).unwrap();
        for i in 0..6 {
            for j in 0..3 {
                assert_eq!(m.w_dec[j * 6 + i], m.w_enc[i * 3 + j]);
                assert!(m.w_enc[i * 3 + j].abs() <= 1.0 / 3f32.sqrt());
            }
        }
        assert_eq!(m.b_pre, vec![1.0, 2.0, 3.0]);
        assert!(m.b_enc.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn config_rejects_bad_shapes() {
        let base = SaeConfig {
            input_dim: 4,
            latent_dim: 8,
            top_k: 2,
            ..Default::default()
        };
        assert!(base.validate().is_ok());
        assert!(SaeConfig { top_k: 9, ..base.clone() }.validate().is_err());
        assert!(SaeConfig { latent_dim: 3, top_k: 1, ..base.clone() }.validate().is_err());
        assert!(SaeConfig { learning_rate: 0.0, ..base }.validate().is_err());
    }
}
