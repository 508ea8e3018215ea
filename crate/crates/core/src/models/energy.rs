use serde::{Deserialize, Serialize};

use crate::diffcore::Denoiser;
use crate::error::{Error, Result};
use crate::rulekit::{Encoding, Family, RuleSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    pub lambda_p: f64,
    pub beta: f64,
    /// Use `2K − D` as the exact-K target so the minimum is the ±1 coding of
    /// "exactly K positive entries"; `false` keeps `K` literally.
    pub exactk_pm1_consistent: bool,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            lambda_p: 1.0,
            beta: 1.0,
            exactk_pm1_consistent: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum RuleTerm {
    Parity { g: usize },
    Sum { target: f64 },
}

/// Cube-plus-rule energy for binary parity and exact-K rules:
/// `E = ½Σ(x_i² − 1)² + λ_p·E_f(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyModel {
    dim: usize,
    term: RuleTerm,
    cfg: EnergyConfig,
}

impl EnergyModel {
    pub fn new(rule: &RuleSpec, cfg: EnergyConfig) -> Result<Self> {
        if !(cfg.lambda_p > 0.0) {
            return Err(Error::config("lambda_p", "must be positive"));
        }
        if !(cfg.beta > 0.0) {
            return Err(Error::config("beta", "must be positive"));
        }
        if rule.encoding() != Encoding::Scalar {
            return Err(Error::Unsupported("energy models need scalar encoding".into()));
        }
        let term = match rule.family() {
            Family::GroupParity { g, .. } => RuleTerm::Parity { g: *g },
            Family::ExactK { d, k } => RuleTerm::Sum {
                target: if cfg.exactk_pm1_consistent {
                    2.0 * *k as f64 - *d as f64
                } else {
                    *k as f64
                },
            },
            _ => return Err(Error::Unsupported(format!("no energy model for {rule}"))),
        };
        Ok(Self {
            dim: rule.dim(),
            term,
            cfg,
        })
    }

    pub fn config(&self) -> &EnergyConfig {
        &self.cfg
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let cube: f64 = x.iter().map(|v| 0.5 * (v * v - 1.0).powi(2)).sum();
        let rule = match self.term {
            RuleTerm::Parity { g } => x
                .chunks(g)
                .map(|grp| 0.5 * (grp.iter().product::<f64>() - 1.0).powi(2))
                .sum(),
            RuleTerm::Sum { target } => 0.5 * (x.iter().sum::<f64>() - target).powi(2),
        };
        cube + self.cfg.lambda_p * rule
    }

    /// `∇E`, written into `out`.
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = 2.0 * v * (v * v - 1.0);
        }
        let lp = self.cfg.lambda_p;
        match self.term {
            RuleTerm::Parity { g } => {
                let mut others = vec![0.0; g];
                for (grp, og) in x.chunks(g).zip(out.chunks_mut(g)) {
                    // products of all other entries via prefix/suffix sweeps
                    let mut acc = 1.0;
                    for i in 0..g {
                        others[i] = acc;
                        acc *= grp[i];
                    }
                    let full = acc;
                    let mut acc = 1.0;
                    for i in (0..g).rev() {
                        others[i] *= acc;
                        acc *= grp[i];
                    }
                    for i in 0..g {
                        og[i] += lp * (full - 1.0) * others[i];
                    }
                }
            }
            RuleTerm::Sum { target } => {
                let r = x.iter().sum::<f64>() - target;
                out.iter_mut().for_each(|o| *o += lp * r);
            }
        }
    }

    /// Score `−β∇E`.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.grad(x, &mut g);
        g.iter_mut().for_each(|v| *v *= -self.cfg.beta);
        g
    }
}

impl Denoiser for EnergyModel {
    fn dim(&self) -> usize {
        self.dim
    }

    /// `x̂₀ = x + σ²·(−β∇E(x))`.
    fn denoise(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        self.grad(x, out);
        let k = -self.cfg.beta * sigma * sigma;
        for (o, v) in out.iter_mut().zip(x) {
            *o = v + k * *o;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn parity(d: usize, g: usize, lambda_p: f64) -> EnergyModel {
        let cfg = EnergyConfig {
            lambda_p,
            ..EnergyConfig::default()
        };
        EnergyModel::new(&RuleSpec::parity(d, g).unwrap(), cfg).unwrap()
    }

    #[test]
    fn all_plus_is_a_zero_energy_minimum() {
        for g in [1, 2, 3, 6] {
            let m = parity(6, g, 1.7);
            let x = [1.0; 6];
            assert_eq!(m.value(&x), 0.0);
            let mut gr = [9.0; 6];
            m.grad(&x, &mut gr);
            assert_eq!(gr, [0.0; 6]);
        }
    }

    #[test]
    fn odd_group_energy_and_gradient() {
        let lp = 0.8;
        let m = parity(3, 3, lp);
        let x = [-1.0, 1.0, 1.0];
        assert!((m.value(&x) - 2.0 * lp).abs() < 1e-15);
        let mut g = [0.0; 3];
        m.grad(&x, &mut g);
        assert!((g[0] + 2.0 * lp).abs() < 1e-15);
    }

    #[test]
    fn exact_k_targets() {
        let r = RuleSpec::exact_k(4, 3).unwrap();
        let consistent = EnergyModel::new(&r, EnergyConfig::default()).unwrap();
        // three +1 and one -1 sum to 2 = 2K - D
        assert_eq!(consistent.value(&[1.0, 1.0, 1.0, -1.0]), 0.0);
        let literal = EnergyModel::new(
            &r,
            EnergyConfig {
                exactk_pm1_consistent: false,
                ..EnergyConfig::default()
            },
        )
        .unwrap();
        assert_eq!(literal.value(&[1.0, 1.0, 1.0, 0.0]), 0.5);
        assert_eq!(literal.value(&[1.0, 1.0, 1.0, -1.0]), 0.5);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let models = [
            parity(12, 3, 1.3),
            parity(12, 4, 0.5),
            EnergyModel::new(&RuleSpec::exact_k(12, 5).unwrap(), EnergyConfig::default()).unwrap(),
        ];
        let h = 1e-5;
        for m in &models {
            for _ in 0..100 {
                let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.5..1.5)).collect();
                let mut g = vec![0.0; 12];
                m.grad(&x, &mut g);
                for i in 0..12 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (m.value(&xp) - m.value(&xm)) / (2.0 * h);
                    assert!((fd - g[i]).abs() < 1e-6, "{fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn rejects_unsupported() {
        assert!(EnergyModel::new(&RuleSpec::latin(3).unwrap(), EnergyConfig::default()).is_err());
        let bad = EnergyConfig {
            lambda_p: 0.0,
            ..EnergyConfig::default()
        };
        assert!(EnergyModel::new(&RuleSpec::parity(4, 2).unwrap(), bad).is_err());
    }

    #[test]
    fn denoiser_is_tweedie_of_score() {
        let m = parity(6, 3, 1.0);
        let x = [0.3, -0.8, 1.2, 0.1, 0.9, -1.1];
        let mut d = [0.0; 6];
        m.denoise(&x, 0.5, &mut d);
        let s = m.score(&x);
        for i in 0..6 {
            assert!((d[i] - (x[i] + 0.25 * s[i])).abs() < 1e-15);
        }
    }
}
