use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{add_noise, loss_weight, pairwise_sum, Denoiser, EdmConfig};
use crate::error::{Error, Result};

pub const SPECTRUM_LEVELS: usize = 50;
pub const SPECTRUM_SIGMA_MIN: f64 = 0.002;
pub const SPECTRUM_SIGMA_MAX: f64 = 80.0;
pub const DEFAULT_REPEATS: usize = 8;
/// Noise band where the train/held-out gap is read off.
pub const BAND: (f64, f64) = (0.2, 2.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Split {
    Train,
    HeldOutValid,
    UniformCube,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::HeldOutValid, Split::UniformCube];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::HeldOutValid => "heldOutValid",
            Split::UniformCube => "uniformCube",
        }
    }

    fn code(self) -> u64 {
        self as u64
    }
}

/// `levels` log-spaced noise levels with exact endpoints.
pub fn log_grid(lo: f64, hi: f64, levels: usize) -> Vec<f64> {
    if levels == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut g: Vec<f64> = (0..levels)
        .map(|i| (a + (b - a) * i as f64 / (levels - 1) as f64).exp())
        .collect();
    g[0] = lo;
    g[levels - 1] = hi;
    g
}

/// The default 50-level grid over `[0.002, 80]`.
pub fn spectrum_grid() -> Vec<f64> {
    log_grid(SPECTRUM_SIGMA_MIN, SPECTRUM_SIGMA_MAX, SPECTRUM_LEVELS)
}

/// `m` uniformly random `±1` vectors drawn from `seed`.
pub fn uniform_cube_split(dim: usize, m: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((m, dim), || if rng.random::<bool>() { 1.0 } else { -1.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpectrumPoint {
    pub split: Split,
    pub sigma: f64,
    pub step: u64,
    /// Mean per-coordinate squared error over samples and repeats.
    pub loss: f64,
    /// Standard error of `loss`.
    pub se: f64,
}

/// Per-σ DSM losses on the three splits at one or more checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpectrumMatrix {
    pub sigmas: Vec<f64>,
    pub steps: Vec<u64>,
    pub weighted: bool,
    pub repeats: usize,
    pub noise_seed: u64,
    pub cube_seed: u64,
    pub points: Vec<SpectrumPoint>,
}

#[derive(Clone, Debug)]
pub struct SpectrumConfig {
    pub sigmas: Vec<f64>,
    pub repeats: usize,
    pub weighted: bool,
    /// Seed of the evaluation noise; the stream is fixed per
    /// (split, σ, repeat) so spectra are comparable across checkpoints.
    pub noise_seed: u64,
    pub edm: EdmConfig,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            sigmas: spectrum_grid(),
            repeats: DEFAULT_REPEATS,
            weighted: false,
            noise_seed: 0,
            edm: EdmConfig::default(),
        }
    }
}

/// Evaluation sets, already encoded.
pub struct Splits<'a> {
    pub train: ArrayView2<'a, f64>,
    pub held_out: ArrayView2<'a, f64>,
    pub cube: ArrayView2<'a, f64>,
}

impl Splits<'_> {
    fn get(&self, s: Split) -> ArrayView2<'_, f64> {
        match s {
            Split::Train => self.train.view(),
            Split::HeldOutValid => self.held_out.view(),
            Split::UniformCube => self.cube.view(),
        }
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Spectrum of one denoiser at one checkpoint.
pub fn dsm_spectrum<D: Denoiser + ?Sized>(
    denoiser: &D,
    splits: &Splits<'_>,
    cfg: &SpectrumConfig,
    step: u64,
) -> Result<Vec<SpectrumPoint>> {
    if cfg.repeats == 0 {
        return Err(Error::config("repeats", "must be positive"));
    }
    let dim = denoiser.dim();
    let mut out = Vec::with_capacity(3 * cfg.sigmas.len());
    for split in Split::ALL {
        let clean = splits.get(split);
        if clean.nrows() == 0 {
            return Err(Error::config("splits", format!("split {} is empty", split.name())));
        }
        if clean.ncols() != dim {
            return Err(Error::Shape(format!("split {} has width {}, model {}", split.name(), clean.ncols(), dim)));
        }
        for (si, &sigma) in cfg.sigmas.iter().enumerate() {
            if !(sigma > 0.0) {
                return Err(Error::NonPositiveSigma(sigma));
            }
            let w = if cfg.weighted { loss_weight(sigma, &cfg.edm) } else { 1.0 };
            let mut losses = Vec::with_capacity(cfg.repeats * clean.nrows());
            for r in 0..cfg.repeats {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
                rng.set_stream((split.code() * cfg.sigmas.len() as u64 + si as u64) * cfg.repeats as u64 + r as u64);
                let noisy = add_noise(clean, sigma, &mut rng);
                let mut den = Array2::zeros(noisy.raw_dim());
                denoiser.denoise_batch(noisy.view(), sigma, den.view_mut());
                for (d, x) in den.axis_iter(Axis(0)).zip(clean.axis_iter(Axis(0))) {
                    let se: f64 = d.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
                    losses.push(w * se / dim as f64);
                }
            }
            let (loss, se) = mean_se(&losses);
            out.push(SpectrumPoint {
                split,
                sigma,
                step,
                loss,
                se,
            });
        }
    }
    Ok(out)
}

impl SpectrumMatrix {
    pub fn new(cfg: &SpectrumConfig, cube_seed: u64) -> Self {
        Self {
            sigmas: cfg.sigmas.clone(),
            steps: Vec::new(),
            weighted: cfg.weighted,
            repeats: cfg.repeats,
            noise_seed: cfg.noise_seed,
            cube_seed,
            points: Vec::new(),
        }
    }

    pub fn add<D: Denoiser + ?Sized>(
        &mut self,
        denoiser: &D,
        splits: &Splits<'_>,
        cfg: &SpectrumConfig,
        step: u64,
    ) -> Result<()> {
        let pts = dsm_spectrum(denoiser, splits, cfg, step)?;
        self.steps.push(step);
        self.points.extend(pts);
        Ok(())
    }

    /// Points of one split at one step, in σ order.
    pub fn series(&self, split: Split, step: u64) -> Vec<SpectrumPoint> {
        self.points
            .iter()
            .filter(|p| p.split == split && p.step == step)
            .copied()
            .collect()
    }

    /// Long-format CSV: `split,sigma,step,loss,se`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("split,sigma,step,loss,se\n");
        for p in &self.points {
            writeln!(s, "{},{:?},{},{:?},{:?}", p.split.name(), p.sigma, p.step, p.loss, p.se).unwrap();
        }
        fs::write(path, s)?;
        Ok(())
    }
}
