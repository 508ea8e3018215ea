use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::mlp::{put_cols, Cache};
use super::{stream_rng, AdamState, CheckpointView, Mlp, RngState, TrainConfig, TrainHooks, STREAM_INIT, STREAM_TRAIN};
use crate::diffcore::{loss_weight, sample_sigma, Denoiser, EdmConfig, Precond};
use crate::error::{Error, Result};
use crate::rulekit::Dataset;

/// EDM-preconditioned MLP denoiser.
///
/// The raw network sees `c_in·x`, `c_noise`, and `fourier_pairs` sine/cosine
/// features `sin(2^(k/2)·c_noise)`, `cos(2^(k/2)·c_noise)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpDenoiser {
    net: Mlp,
    edm: EdmConfig,
    dim: usize,
    fourier_pairs: usize,
}

/// Intermediate values of one batched forward pass.
struct Forward {
    out: Array2<f64>,
    cache: Cache,
    pre: Vec<Precond>,
}

impl MlpDenoiser {
    pub fn new<R: Rng + ?Sized>(dim: usize, cfg: &TrainConfig, edm: EdmConfig, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![dim + 1 + 2 * cfg.fourier_pairs];
        sizes.extend(&cfg.hidden);
        sizes.push(dim);
        Ok(Self {
            net: Mlp::new(&sizes, cfg.activation, rng)?,
            edm,
            dim,
            fourier_pairs: cfg.fourier_pairs,
        })
    }

    pub fn from_net(net: Mlp, edm: EdmConfig, fourier_pairs: usize) -> Result<Self> {
        let dim = net.output_dim();
        if net.input_dim() != dim + 1 + 2 * fourier_pairs {
            return Err(Error::Shape(format!(
                "network input {} does not match dim {dim} with {fourier_pairs} Fourier pairs",
                net.input_dim()
            )));
        }
        Ok(Self {
            net,
            edm,
            dim,
            fourier_pairs,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn edm(&self) -> &EdmConfig {
        &self.edm
    }

    pub fn fourier_pairs(&self) -> usize {
        self.fourier_pairs
    }

    /// Errors if any parameter is non-finite.
    pub fn check_finite(&self) -> Result<()> {
        if self.net.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { step: 0 })
        }
    }

    fn inputs(&self, x: ArrayView2<f64>, pre: &[Precond]) -> Array2<f64> {
        let b = x.nrows();
        let mut inp = Array2::zeros((b, self.net.input_dim()));
        let scaled = Array2::from_shape_fn((b, self.dim), |(i, j)| pre[i].c_in * x[(i, j)]);
        put_cols(&mut inp, 0, scaled.view());
        for (i, p) in pre.iter().enumerate() {
            inp[(i, self.dim)] = p.c_noise;
            for k in 0..self.fourier_pairs {
                let f = 2f64.powf(k as f64 / 2.0) * p.c_noise;
                inp[(i, self.dim + 1 + 2 * k)] = f.sin();
                inp[(i, self.dim + 2 + 2 * k)] = f.cos();
            }
        }
        inp
    }

    fn forward(&self, x: ArrayView2<f64>, sigmas: &[f64]) -> Forward {
        let pre: Vec<Precond> = sigmas.iter().map(|s| Precond::at(*s, self.edm.sigma_data)).collect();
        let inp = self.inputs(x, &pre);
        let (f, cache) = self.net.forward(inp.view());
        let mut out = f;
        for ((mut row, xr), p) in out.rows_mut().into_iter().zip(x.rows()).zip(&pre) {
            row.zip_mut_with(&xr, |o, x| *o = p.c_skip * x + p.c_out * *o);
        }
        Forward { out, cache, pre }
    }

    /// Weighted DSM loss `mean_b λ_b‖D(x_b) − x0_b‖²/dim` and its gradient
    /// with respect to the parameters.
    pub fn loss_and_grad(&self, noisy: ArrayView2<f64>, clean: ArrayView2<f64>, sigmas: &[f64]) -> (f64, Vec<f64>) {
        let fw = self.forward(noisy, sigmas);
        let (b, d) = (noisy.nrows() as f64, self.dim as f64);
        let mut loss = 0.0;
        let mut dout = Array2::zeros(fw.out.raw_dim());
        for (i, ((o, c), p)) in fw.out.rows().into_iter().zip(clean.rows()).zip(&fw.pre).enumerate() {
            let lam = loss_weight(sigmas[i], &self.edm);
            let mut row_loss = 0.0;
            for j in 0..self.dim {
                let r = o[j] - c[j];
                row_loss += r * r;
                dout[(i, j)] = 2.0 * lam * r * p.c_out / (b * d);
            }
            loss += lam * row_loss;
        }
        let grads = self.net.backward(&fw.cache, dout);
        (loss / (b * d), grads)
    }

    /// Weighted DSM loss only.
    pub fn loss(&self, noisy: ArrayView2<f64>, clean: ArrayView2<f64>, sigmas: &[f64]) -> f64 {
        let fw = self.forward(noisy, sigmas);
        let per: f64 = fw
            .out
            .rows()
            .into_iter()
            .zip(clean.rows())
            .enumerate()
            .map(|(i, (o, c))| {
                loss_weight(sigmas[i], &self.edm) * o.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum();
        per / (noisy.nrows() * self.dim) as f64
    }
}

impl Denoiser for MlpDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn denoise(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        let xv = ArrayView2::from_shape((1, self.dim), x).expect("dimension checked by caller");
        let fw = self.forward(xv, &[sigma]);
        out.copy_from_slice(fw.out.as_slice().expect("contiguous"));
    }

    fn denoise_batch(&self, x: ArrayView2<f64>, sigma: f64, mut out: ArrayViewMut2<f64>) {
        // chunked so that the rayon pool can share the work
        const CHUNK: usize = 256;
        let sig = vec![sigma; CHUNK];
        let parts: Vec<(usize, Array2<f64>)> = {
            use rayon::prelude::*;
            (0..x.nrows().div_ceil(CHUNK))
                .into_par_iter()
                .map(|c| {
                    let lo = c * CHUNK;
                    let hi = (lo + CHUNK).min(x.nrows());
                    let rows = x.slice(ndarray::s![lo..hi, ..]);
                    (lo, self.forward(rows, &sig[..hi - lo]).out)
                })
                .collect()
        };
        for (lo, part) in parts {
            out.slice_mut(ndarray::s![lo..lo + part.nrows(), ..]).assign(&part);
        }
    }
}

/// Trains an [`MlpDenoiser`] on the encoded dataset.
///
/// Each step draws `batch_size` training rows with replacement, one `σ` per
/// row from the log-normal, and takes one Adam step on the weighted DSM
/// loss. Hooks run at every resolved checkpoint step.
pub fn train_dsm(
    cfg: &TrainConfig,
    edm: &EdmConfig,
    dataset: &Dataset,
    hooks: &mut dyn TrainHooks<MlpDenoiser>,
) -> Result<MlpDenoiser> {
    cfg.validate()?;
    edm.validate()?;
    let data = dataset.encoded();
    if data.nrows() == 0 {
        return Err(Error::config("n", "dataset is empty"));
    }
    let mut model = MlpDenoiser::new(data.ncols(), cfg, *edm, &mut stream_rng(cfg.seed, STREAM_INIT))?;
    let mut rng = stream_rng(cfg.seed, STREAM_TRAIN);
    let mut opt = AdamState::new(model.net.n_params());
    let checkpoints = cfg.resolved_checkpoints();
    let mut next_ck = 0;
    let (b, dim) = (cfg.batch_size, data.ncols());
    let mut clean = Array2::zeros((b, dim));
    let mut noisy = Array2::zeros((b, dim));
    let mut sigmas = vec![0.0; b];
    let mut loss_acc = 0.0;
    let mut loss_n = 0u64;

    for step in 1..=cfg.total_steps {
        for i in 0..b {
            let r = rng.random_range(0..data.nrows());
            clean.row_mut(i).assign(&data.row(r));
            sigmas[i] = sample_sigma(&mut rng, edm);
        }
        for i in 0..b {
            for j in 0..dim {
                let z: f64 = rng.sample(StandardNormal);
                noisy[(i, j)] = clean[(i, j)] + sigmas[i] * z;
            }
        }
        let (loss, grads) = model.loss_and_grad(noisy.view(), clean.view(), &sigmas);
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            hooks.diverged(&CheckpointView {
                step: step - 1,
                model: &model,
                optimizer: &opt,
                rng: RngState::capture(&rng),
                mean_loss: f64::NAN,
            })?;
            return Err(Error::NonFinite { step: step as usize });
        }
        opt.step(model.net.params_mut(), &grads, &cfg.optimizer);
        loss_acc += loss;
        loss_n += 1;
        if next_ck < checkpoints.len() && checkpoints[next_ck] == step {
            hooks.checkpoint(&CheckpointView {
                step,
                model: &model,
                optimizer: &opt,
                rng: RngState::capture(&rng),
                mean_loss: loss_acc / loss_n as f64,
            })?;
            loss_acc = 0.0;
            loss_n = 0;
            next_ck += 1;
            if hooks.stop() {
                break;
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulekit::{generate_dataset, RuleSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            hidden: vec![16, 16],
            fourier_pairs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_output_layer_is_c_skip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let edm = EdmConfig::default();
        let m = MlpDenoiser::new(6, &TrainConfig::default(), edm, &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let mut out = [0.0; 6];
        for sigma in [0.002, 0.3, 1.0, 80.0] {
            m.denoise(&x, sigma, &mut out);
            let c = Precond::new(sigma, &edm).unwrap().c_skip;
            for (o, v) in out.iter().zip(&x) {
                assert_eq!(*o, c * v);
            }
        }
    }

    #[test]
    fn output_finite_on_wide_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = MlpDenoiser::new(4, &small_cfg(), EdmConfig::default(), &mut rng).unwrap();
        for p in m.net_mut().params_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        let mut out = [0.0; 4];
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-100.0..100.0)).collect();
            let sigma = rng.random_range(0.002..80.0);
            m.denoise(&x, sigma, &mut out);
            assert!(out.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = MlpDenoiser::new(5, &small_cfg(), EdmConfig::default(), &mut rng).unwrap();
        for p in m.net_mut().params_mut() {
            *p = rng.random_range(-0.5..0.5);
        }
        let clean = Array2::from_shape_fn((6, 5), |_| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let sigmas: Vec<f64> = (0..6).map(|i| 0.05 * 3f64.powi(i)).collect();
        let noisy = Array2::from_shape_fn((6, 5), |(i, j)| clean[(i, j)] + sigmas[i] * rng.random_range(-1.0..1.0));
        let (_, g) = m.loss_and_grad(noisy.view(), clean.view(), &sigmas);
        let n = m.net().n_params();
        let h = 1e-6;
        for k in [0, n / 5, n / 2, n - 7, n - 1] {
            let mut mp = m.clone();
            mp.net_mut().params_mut()[k] += h;
            let mut mm = m.clone();
            mm.net_mut().params_mut()[k] -= h;
            let fd = (mp.loss(noisy.view(), clean.view(), &sigmas) - mm.loss(noisy.view(), clean.view(), &sigmas)) / (2.0 * h);
            let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-12);
            assert!(rel < 1e-4, "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn batch_denoise_matches_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = MlpDenoiser::new(3, &small_cfg(), EdmConfig::default(), &mut rng).unwrap();
        for p in m.net_mut().params_mut() {
            *p = rng.random_range(-0.5..0.5);
        }
        let x = Array2::from_shape_fn((600, 3), |_| rng.random_range(-2.0..2.0));
        let mut out = Array2::zeros((600, 3));
        m.denoise_batch(x.view(), 0.4, out.view_mut());
        let mut row = [0.0; 3];
        for i in [0, 255, 256, 599] {
            m.denoise(&x.row(i).to_vec(), 0.4, &mut row);
            for j in 0..3 {
                assert!((row[j] - out[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let r = RuleSpec::parity(6, 2).unwrap();
        let ds = generate_dataset(&r, 8, 0).unwrap();
        let mut cfg = small_cfg();
        cfg.optimizer.learning_rate = 0.0;
        cfg.total_steps = 30;
        cfg.checkpoint_steps = vec![1, 30];
        let mut seen = Vec::new();
        train_dsm(&cfg, &EdmConfig::default(), &ds, &mut |v: &CheckpointView<'_, MlpDenoiser>| {
            seen.push(v.model.net().params().to_vec());
            Ok(())
        })
        .unwrap();
        assert_eq!(seen.len(), 2);
        assert_eq!(seen[0], seen[1]);
    }

    #[test]
    fn deterministic_under_seed() {
        let r = RuleSpec::parity(6, 2).unwrap();
        let ds = generate_dataset(&r, 8, 0).unwrap();
        let mut cfg = small_cfg();
        cfg.optimizer.learning_rate = 1e-3;
        cfg.total_steps = 100;
        cfg.checkpoint_steps = vec![100];
        let run = || train_dsm(&cfg, &EdmConfig::default(), &ds, &mut |_: &CheckpointView<'_, MlpDenoiser>| Ok(())).unwrap();
        assert_eq!(run().net().params(), run().net().params());
    }
}
