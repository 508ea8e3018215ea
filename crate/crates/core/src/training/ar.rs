use ndarray::Array2;
use rand::Rng;

use super::{stream_rng, AdamState, CheckpointView, Mlp, RngState, TrainConfig, TrainHooks, STREAM_INIT, STREAM_TRAIN};
use crate::error::{Error, Result};
use crate::rulekit::{Dataset, Sample};

/// Autoregressive model over ±1 sequences of length `D`.
///
/// Position `k` is predicted from the prefix `x_0..x_{k-1}` zero-padded to
/// length `D` and concatenated with a one-hot of `k`; the network returns
/// the logit of `P(x_k = +1)`. An empty prefix plays the role of a
/// start-of-sequence token.
#[derive(Clone, Debug, PartialEq)]
pub struct ArModel {
    net: Mlp,
    dim: usize,
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

impl ArModel {
    pub fn new<R: Rng + ?Sized>(dim: usize, cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![2 * dim];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        Ok(Self {
            net: Mlp::new(&sizes, cfg.activation, rng)?,
            dim,
        })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if net.output_dim() != 1 || net.input_dim() % 2 != 0 {
            return Err(Error::Shape("autoregressive network must map 2D inputs to one logit".into()));
        }
        let dim = net.input_dim() / 2;
        Ok(Self { net, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    /// One input row per (sample, position), sample-major.
    fn inputs(&self, samples: &[&[i8]]) -> Array2<f64> {
        let d = self.dim;
        let mut inp = Array2::zeros((samples.len() * d, 2 * d));
        for (b, s) in samples.iter().enumerate() {
            for k in 0..d {
                let r = b * d + k;
                for j in 0..k {
                    inp[(r, j)] = f64::from(s[j]);
                }
                inp[(r, d + k)] = 1.0;
            }
        }
        inp
    }

    /// Logits for every position of every sample, shape `(B, D)`.
    pub fn logits(&self, samples: &[&[i8]]) -> Array2<f64> {
        let inp = self.inputs(samples);
        let out = self.net.predict(inp.view());
        out.into_shape_with_order((samples.len(), self.dim)).expect("B*D logits")
    }

    /// Mean cross-entropy over batch and positions, and its gradient.
    pub fn loss_and_grad(&self, samples: &[&[i8]]) -> (f64, Vec<f64>) {
        let inp = self.inputs(samples);
        let (out, cache) = self.net.forward(inp.view());
        let n = out.nrows() as f64;
        let mut loss = 0.0;
        let mut dout = Array2::zeros(out.raw_dim());
        for (r, logit) in out.column(0).iter().enumerate() {
            let y = f64::from(samples[r / self.dim][r % self.dim]);
            loss += softplus(-y * logit);
            dout[(r, 0)] = -y * sigmoid(-y * logit) / n;
        }
        (loss / n, self.net.backward(&cache, dout))
    }

    pub fn loss(&self, samples: &[&[i8]]) -> f64 {
        let ce = ar_nll_batch(self, samples);
        ce.sum() / ce.len() as f64
    }
}

/// Per-position negative log-likelihood of `s`.
pub fn ar_nll(model: &ArModel, s: &Sample) -> Vec<f64> {
    ar_nll_batch(model, &[s.values()]).row(0).to_vec()
}

/// Per-position negative log-likelihoods, shape `(B, D)`.
pub fn ar_nll_batch(model: &ArModel, samples: &[&[i8]]) -> Array2<f64> {
    let mut l = model.logits(samples);
    for (b, mut row) in l.rows_mut().into_iter().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = softplus(-f64::from(samples[b][k]) * *v);
        }
    }
    l
}

/// Mean cross-entropy at each position over a set of samples.
pub fn per_position_ce(model: &ArModel, samples: &[Sample]) -> Vec<f64> {
    if samples.is_empty() {
        return vec![f64::NAN; model.dim];
    }
    let views: Vec<&[i8]> = samples.iter().map(Sample::values).collect();
    let ce = ar_nll_batch(model, &views);
    ce.mean_axis(ndarray::Axis(0)).expect("nonempty").to_vec()
}

/// Draws one sequence left to right. `temperature = 0` takes the most
/// likely bit (ties to `+1`).
pub fn ar_sample<R: Rng + ?Sized>(model: &ArModel, rng: &mut R, temperature: f64) -> Sample {
    let d = model.dim;
    let mut x = vec![0i8; d];
    let mut inp = Array2::zeros((1, 2 * d));
    for k in 0..d {
        if k > 0 {
            inp[(0, k - 1)] = f64::from(x[k - 1]);
            inp[(0, d + k - 1)] = 0.0;
        }
        inp[(0, d + k)] = 1.0;
        let logit = model.net.predict(inp.view())[(0, 0)];
        x[k] = if temperature <= 0.0 {
            if logit >= 0.0 {
                1
            } else {
                -1
            }
        } else if rng.random::<f64>() < sigmoid(logit / temperature) {
            1
        } else {
            -1
        };
    }
    Sample(x)
}

/// Trains an [`ArModel`] by next-token cross-entropy on batches drawn with
/// replacement from the dataset.
pub fn train_ntp(cfg: &TrainConfig, dataset: &Dataset, hooks: &mut dyn TrainHooks<ArModel>) -> Result<ArModel> {
    cfg.validate()?;
    if !dataset.rule().is_binary() {
        return Err(Error::Unsupported("autoregressive model needs a binary rule".into()));
    }
    if dataset.is_empty() {
        return Err(Error::config("n", "dataset is empty"));
    }
    let mut model = ArModel::new(dataset.rule().dim(), cfg, &mut stream_rng(cfg.seed, STREAM_INIT))?;
    let mut rng = stream_rng(cfg.seed, STREAM_TRAIN);
    let mut opt = AdamState::new(model.net.n_params());
    let checkpoints = cfg.resolved_checkpoints();
    let mut next_ck = 0;
    let samples = dataset.samples();
    let (mut loss_acc, mut loss_n) = (0.0, 0u64);
    for step in 1..=cfg.total_steps {
        let batch: Vec<&[i8]> = (0..cfg.batch_size)
            .map(|_| samples[rng.random_range(0..samples.len())].values())
            .collect();
        let (loss, grads) = model.loss_and_grad(&batch);
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

/// Inputs for a single prefix, exposed for tests of the encoding.
#[cfg(test)]
fn single_input(model: &ArModel, s: &[i8], k: usize) -> Vec<f64> {
    model.inputs(&[s]).row(k).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulekit::{generate_dataset, RuleSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(dim: usize, seed: u64) -> ArModel {
        let cfg = TrainConfig {
            hidden: vec![12, 12],
            ..TrainConfig::default()
        };
        ArModel::new(dim, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn randomize(m: &mut ArModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in m.net_mut().params_mut() {
            *p = rng.random_range(-0.7..0.7);
        }
    }

    #[test]
    fn prefix_encoding() {
        let m = model(4, 0);
        assert_eq!(single_input(&m, &[1, -1, 1, 1], 0), vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(single_input(&m, &[1, -1, 1, 1], 2), vec![1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn untrained_model_is_a_fair_coin() {
        let m = model(6, 1);
        let ce = ar_nll(&m, &Sample(vec![1, -1, 1, 1, -1, -1]));
        for v in &ce {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000 / 6;
        let mut sum = 0i64;
        for _ in 0..n {
            sum += ar_sample(&m, &mut rng, 1.0).0.iter().map(|v| i64::from(*v)).sum::<i64>();
        }
        let draws = (n * 6) as f64;
        assert!((sum as f64 / draws).abs() < 3.0 / draws.sqrt());
    }

    #[test]
    fn nll_properties() {
        let mut m = model(5, 3);
        randomize(&mut m, 4);
        let s = Sample(vec![1, 1, -1, 1, -1]);
        let ce = ar_nll(&m, &s);
        assert!(ce.iter().all(|v| *v >= 0.0));
        let total = ce.iter().sum::<f64>();
        let mean = ce.iter().sum::<f64>() / 5.0;
        assert!((mean - total / 5.0).abs() < 1e-15);
        // total NLL equals minus log of the product of conditionals
        let logits = m.logits(&[s.values()]);
        let direct: f64 = (0..5)
            .map(|k| {
                let p = sigmoid(logits[(0, k)]);
                -(if s.0[k] > 0 { p } else { 1.0 - p }).ln()
            })
            .sum();
        assert!((direct - total).abs() < 1e-12);
    }

    #[test]
    fn zero_temperature_is_argmax_and_seeded_sampling_repeats() {
        let mut m = model(6, 5);
        randomize(&mut m, 6);
        let a = ar_sample(&m, &mut ChaCha8Rng::seed_from_u64(0), 0.0);
        let b = ar_sample(&m, &mut ChaCha8Rng::seed_from_u64(99), 0.0);
        assert_eq!(a, b);
        let c = ar_sample(&m, &mut ChaCha8Rng::seed_from_u64(7), 1.0);
        let d = ar_sample(&m, &mut ChaCha8Rng::seed_from_u64(7), 1.0);
        assert_eq!(c, d);
        // argmax sequence agrees with its own logits
        let l = m.logits(&[a.values()]);
        for k in 0..6 {
            assert_eq!(a.0[k] > 0, l[(0, k)] >= 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut m = model(5, 8);
        randomize(&mut m, 9);
        let data: Vec<Vec<i8>> = vec![vec![1, 1, -1, -1, 1], vec![-1, 1, 1, -1, -1], vec![1, -1, 1, 1, 1]];
        let views: Vec<&[i8]> = data.iter().map(|v| v.as_slice()).collect();
        let (_, g) = m.loss_and_grad(&views);
        let n = m.net().n_params();
        let h = 1e-6;
        for k in [0, n / 3, n / 2, n - 2, n - 1] {
            let mut mp = m.clone();
            mp.net_mut().params_mut()[k] += h;
            let mut mm = m.clone();
            mm.net_mut().params_mut()[k] -= h;
            let fd = (mp.loss(&views) - mm.loss(&views)) / (2.0 * h);
            let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-12);
            assert!(rel < 1e-4, "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let r = RuleSpec::parity(6, 2).unwrap();
        let ds = generate_dataset(&r, 8, 0).unwrap();
        let cfg = TrainConfig {
            hidden: vec![16, 16],
            batch_size: 8,
            total_steps: 300,
            checkpoint_steps: vec![10, 300],
            optimizer: crate::training::AdamConfig {
                learning_rate: 3e-3,
                ..Default::default()
            },
            ..TrainConfig::default()
        };
        let mut losses = Vec::new();
        let a = train_ntp(&cfg, &ds, &mut |v: &CheckpointView<'_, ArModel>| {
            losses.push(v.mean_loss);
            Ok(())
        })
        .unwrap();
        assert!(losses[1] < losses[0]);
        let b = train_ntp(&cfg, &ds, &mut |_: &CheckpointView<'_, ArModel>| Ok(())).unwrap();
        assert_eq!(a.net().params(), b.net().params());
    }
}
