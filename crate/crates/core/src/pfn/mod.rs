//! In-context curve extrapolation network: a masked transformer encoder
//! trained on the synthetic prior that maps a context of (x, y) points and a
//! set of query x positions to one binned predictive distribution per query.

pub mod bins;
pub mod ckpt;
pub mod model;
pub mod train;

pub use bins::{build_bins, dist_log_prob, dist_max_prob, dist_median, dist_quantile, edges_from_samples, BinnedDistribution};
pub use model::{forward, forward_pass_count, predict_ppd, ForwardOutput};
pub use train::{example_loss, prepare_example, prior_digest, train, train_with_limit, CurveExample, LossParts};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub nlayers: usize,
    pub nheads: usize,
    pub nhidden: usize,
    pub nbins: usize,
    pub y_support: [f64; 2],
    pub batch_size: usize,
    pub total_steps: usize,
    pub warmup: usize,
    pub peak_lr: f64,
    pub autoregressive_context: bool,
    pub interpolation_variant: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            nlayers: 3,
            nheads: 4,
            nhidden: 64,
            nbins: 100,
            y_support: [0.0, 1.5],
            batch_size: 16,
            total_steps: 20_000,
            warmup: 2_000,
            peak_lr: 3e-4,
            autoregressive_context: true,
            interpolation_variant: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nhidden == 0 || self.nheads == 0 || self.nhidden % self.nheads != 0 {
            return Err(Error::invalid(format!(
                "width {} is not divisible by {} heads",
                self.nhidden, self.nheads
            )));
        }
        if self.nbins < 2 {
            return Err(Error::invalid(format!("{} bins; at least 2 required", self.nbins)));
        }
        if self.nlayers == 0 {
            return Err(Error::invalid("at least one layer required"));
        }
        if !(self.y_support[1] > self.y_support[0]) {
            return Err(Error::invalid(format!(
                "y support [{}, {}] is empty",
                self.y_support[0], self.y_support[1]
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.warmup >= self.total_steps {
            return Err(Error::invalid(format!(
                "warmup {} must be shorter than the schedule ({} steps)",
                self.warmup, self.total_steps
            )));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::invalid(format!("peak learning rate {}", self.peak_lr)));
        }
        Ok(())
    }
}

/// Canonical parameter list: names and shapes in storage order.
pub fn param_specs(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let h = config.nhidden;
    let mut specs = vec![
        ("embed.w".to_string(), vec![3, h]),
        ("embed.b".to_string(), vec![h]),
    ];
    for l in 0..config.nlayers {
        let p = |suffix: &str| format!("layer{l}.{suffix}");
        specs.extend([
            (p("ln1.g"), vec![h]),
            (p("ln1.b"), vec![h]),
            (p("wq"), vec![h, h]),
            (p("bq"), vec![h]),
            (p("wk"), vec![h, h]),
            (p("bk"), vec![h]),
            (p("wv"), vec![h, h]),
            (p("bv"), vec![h]),
            (p("wo"), vec![h, h]),
            (p("bo"), vec![h]),
            (p("ln2.g"), vec![h]),
            (p("ln2.b"), vec![h]),
            (p("mlp.w1"), vec![h, 4 * h]),
            (p("mlp.b1"), vec![4 * h]),
            (p("mlp.w2"), vec![4 * h, h]),
            (p("mlp.b2"), vec![h]),
        ]);
    }
    specs.extend([
        ("final_ln.g".to_string(), vec![h]),
        ("final_ln.b".to_string(), vec![h]),
        ("head.w".to_string(), vec![h, config.nbins]),
        ("head.b".to_string(), vec![config.nbins]),
    ]);
    specs
}

/// A live model: configuration, output bin edges, and parameters in the
/// [`param_specs`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct PfnModel {
    pub config: ModelConfig,
    pub edges: Vec<f64>,
    pub params: Vec<Tensor>,
    /// Hex digest of the prior configuration the model was trained against.
    pub prior_digest: String,
}

/// Fresh parameters: Xavier-uniform weight matrices, zero biases, unit layer
/// norm gains.
pub fn init_model(
    config: &ModelConfig,
    edges: Vec<f64>,
    prior_digest: String,
    seed: u64,
) -> Result<PfnModel> {
    config.validate()?;
    if edges.len() != config.nbins + 1 {
        return Err(Error::invalid(format!(
            "{} edges for {} bins",
            edges.len(),
            config.nbins
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = param_specs(config)
        .into_iter()
        .map(|(name, shape)| {
            if shape.len() == 2 {
                let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let data = (0..shape[0] * shape[1])
                    .map(|_| rng.random::<f64>() * 2.0 * bound - bound)
                    .collect();
                Tensor { shape, data }
            } else if name.ends_with(".g") {
                Tensor { shape: shape.clone(), data: vec![1.0; shape[0]] }
            } else {
                Tensor::zeros(shape)
            }
        })
        .collect();
    Ok(PfnModel {
        config: config.clone(),
        edges,
        params,
        prior_digest,
    })
}
