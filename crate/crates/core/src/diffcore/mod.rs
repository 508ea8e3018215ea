//! EDM preconditioning, noise-level sampling, the denoising score-matching
//! loss, the Karras noise schedule and the deterministic Heun sampler.

mod sampler;
mod schedule;

pub use sampler::{heun_sample, heun_sample_batch};
pub use schedule::{karras_schedule, NoiseSchedule, DEFAULT_RHO, DEFAULT_STEPS};

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdmConfig {
    pub sigma_data: f64,
    pub p_mean: f64,
    pub p_std: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for EdmConfig {
    fn default() -> Self {
        Self {
            sigma_data: 1.0,
            p_mean: -1.2,
            p_std: 1.2,
            sigma_min: 0.002,
            sigma_max: 80.0,
        }
    }
}

impl EdmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_data > 0.0) {
            return Err(Error::config("sigma_data", "must be positive"));
        }
        if !(self.p_std > 0.0) {
            return Err(Error::config("p_std", "must be positive"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max) {
            return Err(Error::config("sigma_min", "need 0 < sigma_min < sigma_max"));
        }
        Ok(())
    }
}

/// The four EDM preconditioning coefficients at one noise level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Precond {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

impl Precond {
    pub fn new(sigma: f64, cfg: &EdmConfig) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::NonPositiveSigma(sigma));
        }
        Ok(Self::at(sigma, cfg.sigma_data))
    }

    /// Unchecked constructor for hot loops where `sigma > 0` is known.
    pub(crate) fn at(sigma: f64, sd: f64) -> Self {
        let s2 = sigma * sigma + sd * sd;
        Self {
            c_skip: sd * sd / s2,
            c_out: sigma * sd / s2.sqrt(),
            c_in: 1.0 / s2.sqrt(),
            c_noise: sigma.ln() / 4.0,
        }
    }
}

/// Wraps a raw network `F(c_in·x, c_noise)` into `D = c_skip·x + c_out·F`.
pub fn precondition<F>(raw: F, x: &[f64], sigma: f64, cfg: &EdmConfig) -> Result<Vec<f64>>
where
    F: FnOnce(&[f64], f64) -> Vec<f64>,
{
    let p = Precond::new(sigma, cfg)?;
    let scaled: Vec<f64> = x.iter().map(|v| p.c_in * v).collect();
    let f = raw(&scaled, p.c_noise);
    if f.len() != x.len() {
        return Err(Error::Shape(format!("network returned {} values for {}", f.len(), x.len())));
    }
    Ok(x.iter().zip(&f).map(|(x, f)| p.c_skip * x + p.c_out * f).collect())
}

/// DSM loss weight `(σ² + σ_d²) / (σ·σ_d)²`.
pub fn loss_weight(sigma: f64, cfg: &EdmConfig) -> f64 {
    let sd = cfg.sigma_data;
    (sigma * sigma + sd * sd) / (sigma * sd).powi(2)
}

/// Draws `σ` with `ln σ ~ N(p_mean, p_std²)`, clamped to `[σ_min, σ_max]`.
pub fn sample_sigma<R: Rng + ?Sized>(rng: &mut R, cfg: &EdmConfig) -> f64 {
    let ln = Normal::new(cfg.p_mean, cfg.p_std).expect("p_std validated positive");
    ln.sample(rng).exp().clamp(cfg.sigma_min, cfg.sigma_max)
}

/// A denoiser `D(x, σ) ≈ E[x₀ | x]`, safe for concurrent evaluation.
pub trait Denoiser: Sync {
    /// Input and output dimension.
    fn dim(&self) -> usize;

    /// Writes `D(x, σ)` into `out`. Requires `σ > 0`.
    fn denoise(&self, x: &[f64], sigma: f64, out: &mut [f64]);

    /// Row-wise [`Denoiser::denoise`] over a batch.
    fn denoise_batch(&self, x: ArrayView2<f64>, sigma: f64, mut out: ArrayViewMut2<f64>) {
        Zip::from(x.rows()).and(out.rows_mut()).par_for_each(|xr, mut or| {
            let xs = xr.to_vec();
            let mut buf = vec![0.0; xs.len()];
            self.denoise(&xs, sigma, &mut buf);
            or.assign(&ndarray::ArrayView1::from(&buf));
        });
    }

    /// Whether the denoiser is the exact posterior mean of a known density.
    fn exact_score(&self) -> bool {
        false
    }
}

impl<T: Denoiser + ?Sized> Denoiser for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn denoise(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        (**self).denoise(x, sigma, out)
    }
    fn denoise_batch(&self, x: ArrayView2<f64>, sigma: f64, out: ArrayViewMut2<f64>) {
        (**self).denoise_batch(x, sigma, out)
    }
    fn exact_score(&self) -> bool {
        (**self).exact_score()
    }
}

/// A denoiser defined by a closure, mostly for oracles and tests.
pub struct FnDenoiser<F> {
    dim: usize,
    f: F,
}

impl<F> FnDenoiser<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Denoiser for FnDenoiser<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn denoise(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        (self.f)(x, sigma, out)
    }
}

/// Adds fresh `σ·z` noise to every row of `clean`.
pub fn add_noise<R: Rng + ?Sized>(clean: ArrayView2<f64>, sigma: f64, rng: &mut R) -> Array2<f64> {
    clean.mapv(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
}

/// Per-sample squared denoising errors `‖D(x₀ + σz, σ) − x₀‖²`, one noise
/// draw per row, optionally multiplied by the loss weight.
pub fn dsm_losses<D, R>(
    denoiser: &D,
    clean: ArrayView2<f64>,
    sigma: f64,
    rng: &mut R,
    weighted: bool,
    cfg: &EdmConfig,
) -> Result<Vec<f64>>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let noisy = add_noise(clean, sigma, rng);
    let mut out = Array2::zeros(noisy.raw_dim());
    denoiser.denoise_batch(noisy.view(), sigma, out.view_mut());
    let w = if weighted { loss_weight(sigma, cfg) } else { 1.0 };
    Ok(out
        .axis_iter(Axis(0))
        .zip(clean.axis_iter(Axis(0)))
        .map(|(d, x)| w * d.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .collect())
}

/// Batch mean of [`dsm_losses`].
pub fn dsm_loss<D, R>(
    denoiser: &D,
    clean: ArrayView2<f64>,
    sigma: f64,
    rng: &mut R,
    weighted: bool,
    cfg: &EdmConfig,
) -> Result<f64>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    let l = dsm_losses(denoiser, clean, sigma, rng, weighted, cfg)?;
    if l.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(pairwise_sum(&l) / l.len() as f64)
}

/// Tweedie's formula: `s = (D(x, σ) − x) / σ²`.
pub fn score_from_denoiser<D: Denoiser + ?Sized>(denoiser: &D, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let mut d = vec![0.0; x.len()];
    denoiser.denoise(x, sigma, &mut d);
    Ok(d.iter().zip(x).map(|(d, x)| (d - x) / (sigma * sigma)).collect())
}

/// Inverse of Tweedie's formula: `D = x + σ²·s`.
pub fn denoiser_from_score(x: &[f64], sigma: f64, score: &[f64]) -> Vec<f64> {
    x.iter().zip(score).map(|(x, s)| x + sigma * sigma * s).collect()
}

/// Order-independent pairwise summation (fixed binary tree over indices).
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n if n <= 8 => v.iter().sum(),
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}
