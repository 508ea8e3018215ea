//! Small trainable models: an EDM-preconditioned MLP denoiser trained by
//! denoising score matching, and an autoregressive bit model trained by
//! next-token cross-entropy. Both use hand-written backprop and Adam.

mod adam;
mod ar;
mod checkpoint;
mod dsm;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use ar::{ar_nll, ar_nll_batch, ar_sample, per_position_ce, train_ntp, ArModel};
pub use checkpoint::{load_checkpoint, save_checkpoint, sha256_hex, CheckpointManifest, RngState};
pub use dsm::{train_dsm, MlpDenoiser};
pub use mlp::{Activation, Cache, Mlp};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub total_steps: u64,
    /// Steps at which hooks run; empty means [`log_checkpoints`] with
    /// `checkpoint_count` points from step 50.
    pub checkpoint_steps: Vec<u64>,
    pub checkpoint_count: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Sine/cosine pairs of the noise-level embedding (DSM model only).
    pub fourier_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            batch_size: 256,
            total_steps: 10_000,
            checkpoint_steps: Vec::new(),
            checkpoint_count: 40,
            seed: 0,
            hidden: vec![128, 128],
            activation: Activation::Tanh,
            fourier_pairs: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::config("adam_beta", "betas must lie in [0, 1)"));
        }
        if o.weight_decay < 0.0 {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden", "need at least one nonzero width"));
        }
        if self.checkpoint_steps.is_empty() && self.checkpoint_count == 0 {
            return Err(Error::config("checkpoint_count", "must be positive"));
        }
        if self.checkpoint_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("checkpoint_steps", "must be strictly ascending"));
        }
        Ok(())
    }

    /// Explicit checkpoint steps, or the default log grid, capped at the
    /// budget.
    pub fn resolved_checkpoints(&self) -> Vec<u64> {
        if self.checkpoint_steps.is_empty() {
            log_checkpoints(50, self.total_steps, self.checkpoint_count)
        } else {
            self.checkpoint_steps
                .iter()
                .copied()
                .filter(|s| *s <= self.total_steps)
                .collect()
        }
    }
}

/// Up to `count` distinct steps spaced uniformly in log-step from `first`
/// to `last` (both included when `first <= last`).
pub fn log_checkpoints(first: u64, last: u64, count: usize) -> Vec<u64> {
    if last == 0 {
        return Vec::new();
    }
    let first = first.clamp(1, last);
    if count <= 1 || first == last {
        return vec![last];
    }
    let (a, b) = ((first as f64).ln(), (last as f64).ln());
    let mut out: Vec<u64> = (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp().round() as u64)
        .collect();
    out[0] = first;
    out[count - 1] = last;
    out.dedup();
    out
}

/// What a hook sees at a checkpoint.
pub struct CheckpointView<'a, M> {
    pub step: u64,
    pub model: &'a M,
    pub optimizer: &'a AdamState,
    pub rng: RngState,
    /// Mean training loss over the steps since the previous checkpoint.
    pub mean_loss: f64,
}

/// Callbacks invoked by the training loops.
pub trait TrainHooks<M> {
    fn checkpoint(&mut self, view: &CheckpointView<'_, M>) -> Result<()>;

    /// Called once with the last finite state before a non-finite loss
    /// aborts training.
    fn diverged(&mut self, _view: &CheckpointView<'_, M>) -> Result<()> {
        Ok(())
    }

    /// Checked after each checkpoint; `true` ends training there.
    fn stop(&self) -> bool {
        false
    }
}

impl<M, F> TrainHooks<M> for F
where
    F: FnMut(&CheckpointView<'_, M>) -> Result<()>,
{
    fn checkpoint(&mut self, view: &CheckpointView<'_, M>) -> Result<()> {
        self(view)
    }
}

/// Independent ChaCha stream `stream` of `seed`.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids used by the trainers.
pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_TRAIN: u64 = 1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_endpoints_and_order() {
        let g = log_checkpoints(50, 200_000, 40);
        assert_eq!(g[0], 50);
        assert_eq!(*g.last().unwrap(), 200_000);
        assert_eq!(g.len(), 40);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        let small = log_checkpoints(1, 10, 40);
        assert!(small.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(small.len(), 10);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.checkpoint_steps = vec![10, 5];
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = TrainConfig {
            checkpoint_steps: vec![1, 2, 3],
            ..TrainConfig::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"learning_rate\""));
        let back: TrainConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
