//! The variational graph transformer: Laplacian-PE input embedding, stacked
//! full-attention transformer layers, a Gaussian latent head and an
//! inner-product edge decoder.

mod decoder;
pub mod encoder;
mod params;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use decoder::{decode_full, decode_pairs};
pub(crate) use decoder::check_pairs;
pub use params::{BoundParams, HeadParams, LayerParams, ModelParams, Params};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub latent: usize,
    pub pe_dim: usize,
    pub ffn_mult: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 4,
            hidden: 128,
            latent: 32,
            pe_dim: 16,
            ffn_mult: 2,
        }
    }
}

impl ModelConfig {
    /// `layers = 0` is accepted: the encoder then reduces to the embedding.
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("latent", self.latent),
            ("pe_dim", self.pe_dim),
            ("ffn_mult", self.ffn_mult),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be >= 1")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// Attention matrices captured during a forward pass, indexed
/// `[layer][head]`, each `N×N` and row-stochastic.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub layers: Vec<Vec<Tensor>>,
}

impl AttentionRecord {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_heads(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    pub fn get(&self, layer: usize, head: usize) -> &Tensor {
        &self.layers[layer][head]
    }

    /// Largest deviation of any row sum from one, or `+∞` if any entry is
    /// negative.
    pub fn max_row_sum_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for m in self.layers.iter().flatten() {
            if m.data().iter().any(|v| *v < 0.0) {
                return f64::INFINITY;
            }
            for i in 0..m.rows() {
                worst = worst.max((m.row(i).iter().sum::<f64>() - 1.0).abs());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub mu: Tensor,
    pub logvar: Tensor,
    pub z: Tensor,
    pub attention: Option<AttentionRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Sample `Z` with the reparameterization trick.
    Train,
    /// `Z = μ`.
    Eval,
}

/// Standard-normal noise of the given shape.
pub fn sample_noise<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `Z = μ + ε ⊙ exp(½ log σ²)` in train mode, `Z = μ` in eval mode.
pub fn reparameterize<R: Rng>(mu: &Tensor, logvar: &Tensor, mode: Mode, rng: &mut R) -> Result<Tensor> {
    if mu.shape() != logvar.shape() {
        return Err(Error::Shape {
            op: "reparameterize",
            left: mu.shape(),
            right: logvar.shape(),
        });
    }
    if mode == Mode::Eval {
        return Ok(mu.clone());
    }
    let eps = sample_noise(mu.rows(), mu.cols(), rng);
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(eps.data())
        .map(|((m, lv), e)| m + e * (0.5 * lv).exp())
        .collect();
    Tensor::from_vec(mu.rows(), mu.cols(), data)
}

/// Model configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GgtVae {
    pub config: ModelConfig,
    pub feature_dim: usize,
    pub params: ModelParams,
}

/// Handles into a training forward pass recorded on a tape.
pub struct TrainForward {
    pub bound: BoundParams,
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
}

impl GgtVae {
    pub fn new<R: Rng>(config: ModelConfig, feature_dim: usize, rng: &mut R) -> Result<Self> {
        let params = ModelParams::init(&config, feature_dim, rng)?;
        Ok(Self {
            config,
            feature_dim,
            params,
        })
    }

    fn check_inputs(&self, features: &Tensor, pe: &Tensor) -> Result<()> {
        let n = features.rows();
        if features.cols() != self.feature_dim {
            return Err(Error::Shape {
                op: "encode.features",
                left: features.shape(),
                right: (n, self.feature_dim),
            });
        }
        if pe.shape() != (n, self.config.pe_dim) {
            return Err(Error::Shape {
                op: "encode.pe",
                left: pe.shape(),
                right: (n, self.config.pe_dim),
            });
        }
        Ok(())
    }

    /// `H⁰ = X·W_x + P·W_p`.
    pub fn embed(&self, features: &Tensor, pe: &Tensor) -> Result<Tensor> {
        self.check_inputs(features, pe)?;
        let mut tape = Tape::new();
        let bound = self.params.map(|_, t| tape.constant(t.clone()));
        let x = tape.constant(features.clone());
        let p = tape.constant(pe.clone());
        let h = encoder::embed_on(&mut tape, x, p, &bound)?;
        Ok(tape.value(h).clone())
    }

    /// Deterministic evaluation-mode forward pass (`Z = μ`).
    pub fn encode(&self, features: &Tensor, pe: &Tensor, capture_attention: bool) -> Result<ForwardOutput> {
        self.check_inputs(features, pe)?;
        let mut tape = Tape::new();
        let bound = self.params.map(|_, t| tape.constant(t.clone()));
        let x = tape.constant(features.clone());
        let p = tape.constant(pe.clone());
        let enc = encoder::encode_on(&mut tape, x, p, &bound, capture_attention)?;
        let mu = tape.value(enc.mu).clone();
        Ok(ForwardOutput {
            z: mu.clone(),
            mu,
            logvar: tape.value(enc.logvar).clone(),
            attention: enc.attention.map(|layers| AttentionRecord { layers }),
        })
    }

    /// Records a sampling forward pass on `tape` with parameters as
    /// gradient-tracked leaves.
    pub fn forward_train<R: Rng>(&self, tape: &mut Tape, features: &Tensor, pe: &Tensor, rng: &mut R) -> Result<TrainForward> {
        self.check_inputs(features, pe)?;
        let bound = self.params.bind(tape);
        let x = tape.constant(features.clone());
        let p = tape.constant(pe.clone());
        let enc = encoder::encode_on(tape, x, p, &bound, false)?;
        let (n, d) = tape.value(enc.mu).shape();
        let eps = sample_noise(n, d, rng);
        let z = encoder::reparameterize_on(tape, enc.mu, enc.logvar, eps)?;
        Ok(TrainForward {
            bound,
            mu: enc.mu,
            logvar: enc.logvar,
            z,
        })
    }
}

#[cfg(test)]
mod tests;
