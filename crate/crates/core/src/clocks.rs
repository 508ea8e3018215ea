//! Training clocks: sustained-threshold onsets, the innovation window
//! between rule learning and memorization, and power-law fits of the
//! memorization time against dataset size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A metric trace as `(step, value)` pairs in ascending step order.
pub type Series = [(u64, f64)];

pub const DEFAULT_SUSTAIN: usize = 5;
pub const DEFAULT_EMA_HALF_LIFE: f64 = 3.0;
pub const RULE_THRESHOLD: f64 = 0.9;
pub const MEM_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Direction {
    Exceeds,
    FallsBelow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OnsetCriterion {
    pub metric: String,
    pub threshold: f64,
    pub direction: Direction,
    pub sustain_count: usize,
    pub use_ema: bool,
    pub ema_half_life: f64,
}

impl OnsetCriterion {
    pub fn exceeds(metric: &str, threshold: f64) -> Self {
        Self {
            metric: metric.to_string(),
            threshold,
            direction: Direction::Exceeds,
            sustain_count: DEFAULT_SUSTAIN,
            use_ema: false,
            ema_half_life: DEFAULT_EMA_HALF_LIFE,
        }
    }

    /// `sampleAcc > 0.9` for five checkpoints.
    pub fn rule_default() -> Self {
        Self::exceeds("sampleAcc", RULE_THRESHOLD)
    }

    /// `sampleMem > threshold` for five checkpoints.
    pub fn mem(threshold: f64) -> Self {
        Self::exceeds("sampleMem", threshold)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sustain_count == 0 {
            return Err(Error::config("sustain_count", "must be at least 1"));
        }
        if !self.threshold.is_finite() {
            return Err(Error::config("threshold", "must be finite"));
        }
        if self.use_ema && !(self.ema_half_life > 0.0) {
            return Err(Error::config("ema_half_life", "must be positive"));
        }
        Ok(())
    }

    fn beyond(&self, v: f64) -> bool {
        match self.direction {
            Direction::Exceeds => v > self.threshold,
            Direction::FallsBelow => v < self.threshold,
        }
    }
}

/// Exponential moving average with decay per checkpoint index,
/// `α = 1 − 2^(−1/h)`. The first value passes through unchanged.
pub fn ema(series: &Series, half_life: f64) -> Vec<(u64, f64)> {
    let a = if half_life > 0.0 {
        1.0 - (-1.0 / half_life).exp2()
    } else {
        1.0
    };
    let mut out = Vec::with_capacity(series.len());
    let mut s = 0.0;
    for (i, &(step, v)) in series.iter().enumerate() {
        s = if i == 0 { v } else { s + a * (v - s) };
        out.push((step, s));
    }
    out
}

/// Step at which the first run of `sustain_count` consecutive values beyond
/// the threshold begins.
pub fn detect_onset(series: &Series, crit: &OnsetCriterion) -> Option<u64> {
    let smoothed;
    let s = if crit.use_ema {
        smoothed = ema(series, crit.ema_half_life);
        &smoothed[..]
    } else {
        series
    };
    let need = crit.sustain_count.max(1);
    let mut run = 0;
    for (i, &(_, v)) in s.iter().enumerate() {
        if crit.beyond(v) {
            run += 1;
            if run == need {
                return Some(s[i + 1 - need].0);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Memorization threshold `0.1 + N / support`, and whether it is
/// unreachable (a sample fraction can never exceed 1).
pub fn adaptive_mem_threshold(n: u64, support: u128) -> (f64, bool) {
    let thr = MEM_THRESHOLD + n as f64 / support as f64;
    (thr, thr >= 1.0)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClockFlags {
    pub memorize_first: bool,
    pub rule_censored: bool,
    pub mem_censored: bool,
    /// The memorization threshold is at or above 1.
    pub mem_undetectable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClockReport {
    pub tau_rule: Option<u64>,
    pub tau_mem: Option<u64>,
    /// `[tau_rule, tau_mem]`, present only when both exist in that order.
    pub window: Option<[u64; 2]>,
    /// Rule onset that was dropped because it did not precede `tau_mem`.
    pub discarded_tau_rule: Option<u64>,
    pub rule_criterion: OnsetCriterion,
    pub mem_criterion: OnsetCriterion,
    pub flags: ClockFlags,
    /// Last checkpoint step seen.
    pub budget: Option<u64>,
}

impl ClockReport {
    pub fn window_length(&self) -> Option<u64> {
        self.window.map(|[a, b]| b - a)
    }
}

/// Rule and memorization onsets from accuracy and memorization traces.
pub fn innovation_window(
    sample_acc: &Series,
    sample_mem: &Series,
    rule: &OnsetCriterion,
    mem: &OnsetCriterion,
) -> ClockReport {
    let raw_rule = detect_onset(sample_acc, rule);
    let tau_mem = detect_onset(sample_mem, mem);
    let mut flags = ClockFlags {
        rule_censored: raw_rule.is_none(),
        mem_censored: tau_mem.is_none(),
        mem_undetectable: mem.direction == Direction::Exceeds && mem.threshold >= 1.0,
        ..ClockFlags::default()
    };
    let (tau_rule, discarded) = match (raw_rule, tau_mem) {
        (Some(r), Some(m)) if r >= m => {
            flags.memorize_first = true;
            (None, Some(r))
        }
        (None, Some(_)) => {
            flags.memorize_first = true;
            (None, None)
        }
        (r, _) => (r, None),
    };
    let window = match (tau_rule, tau_mem) {
        (Some(r), Some(m)) => Some([r, m]),
        _ => None,
    };
    let budget = sample_acc
        .last()
        .map(|p| p.0)
        .into_iter()
        .chain(sample_mem.last().map(|p| p.0))
        .max();
    ClockReport {
        tau_rule,
        tau_mem,
        window,
        discarded_tau_rule: discarded,
        rule_criterion: rule.clone(),
        mem_criterion: mem.clone(),
        flags,
        budget,
    }
}

/// `τ ≈ c · N^alpha` from a log-log least-squares fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PowerLawFit {
    pub c: f64,
    pub alpha: f64,
    pub r2: f64,
    pub n_points: usize,
}

impl PowerLawFit {
    pub fn predict(&self, n: f64) -> f64 {
        self.c * n.powf(self.alpha)
    }
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 2 {
        return Err(Error::config("points", "a power-law fit needs at least two points"));
    }
    if let Some(p) = points.iter().find(|(n, t)| !(*n > 0.0 && *t > 0.0 && n.is_finite() && t.is_finite())) {
        return Err(Error::config(
            "points",
            format!("power-law fit needs positive finite values, got ({}, {})", p.0, p.1),
        ));
    }
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::config("points", "all N values are equal"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let alpha = sxy / sxx;
    let b = my - alpha * mx;
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if points.len() == 2 || syy == 0.0 {
        1.0
    } else {
        let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - b - alpha * x).powi(2)).sum();
        1.0 - sse / syy
    };
    Ok(PowerLawFit {
        c: b.exp(),
        alpha,
        r2,
        n_points: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: &[f64]) -> Vec<(u64, f64)> {
        v.iter().enumerate().map(|(i, &x)| (10 * (i as u64 + 1), x)).collect()
    }

    #[test]
    fn ema_step_response() {
        let s = series(&[0.0, 1.0, 1.0, 1.0, 1.0]);
        let e = ema(&s, 3.0);
        assert_eq!(e[0].1, 0.0);
        assert!((e[3].1 - 0.5).abs() < 1e-12);
        let c = ema(&series(&[0.3; 6]), 2.0);
        assert!(c.iter().all(|p| (p.1 - 0.3).abs() < 1e-15));
        let id = ema(&series(&[0.1, 0.7, 0.2]), 1e-9);
        assert_eq!(id.iter().map(|p| p.1).collect::<Vec<_>>(), vec![0.1, 0.7, 0.2]);
    }

    #[test]
    fn onset_examples() {
        let c = OnsetCriterion::rule_default();
        let s = series(&[0.0, 0.0, 0.95, 0.95, 0.95, 0.95, 0.95]);
        assert_eq!(detect_onset(&s, &c), Some(30));
        assert_eq!(detect_onset(&series(&[0.0, 0.95, 0.0, 0.0, 0.0, 0.0]), &c), None);
        assert_eq!(detect_onset(&series(&[0.5; 8]), &c), None);
        let mut below = OnsetCriterion::exceeds("loss", 0.2);
        below.direction = Direction::FallsBelow;
        below.sustain_count = 2;
        assert_eq!(detect_onset(&series(&[1.0, 0.1, 0.5, 0.1, 0.1]), &below), Some(40));
    }

    #[test]
    fn thresholds() {
        let (t, flag) = adaptive_mem_threshold(64, 256);
        assert!((t - 0.35).abs() < 1e-15 && !flag);
        let (t, _) = adaptive_mem_threshold(4096, 1 << 30);
        assert!((t - 0.100_003_814_697_265_6).abs() < 1e-15);
        assert_eq!(adaptive_mem_threshold(256, 256), (1.1, true));
    }

    #[test]
    fn window_cases() {
        let r = OnsetCriterion::rule_default();
        let m = OnsetCriterion::mem(0.1);
        let steps: Vec<u64> = (0..12).map(|i| 10u64.pow(2) * (1 << i)).collect();
        let mk = |on: usize| -> Vec<(u64, f64)> {
            steps.iter().enumerate().map(|(i, &s)| (s, if i >= on { 1.0 } else { 0.0 })).collect()
        };
        let rep = innovation_window(&mk(1), &mk(5), &r, &m);
        assert_eq!(rep.window, Some([steps[1], steps[5]]));
        assert_eq!(rep.window_length(), Some(steps[5] - steps[1]));
        assert!(!rep.flags.memorize_first);

        let rep = innovation_window(&mk(20), &mk(3), &r, &m);
        assert_eq!(rep.tau_rule, None);
        assert!(rep.flags.memorize_first && rep.window.is_none());

        let rep = innovation_window(&mk(4), &mk(2), &r, &m);
        assert_eq!(rep.discarded_tau_rule, Some(steps[4]));
        assert!(rep.flags.memorize_first && rep.window.is_none());

        let rep = innovation_window(&mk(20), &mk(20), &r, &m);
        assert!(rep.flags.rule_censored && rep.flags.mem_censored);
        assert_eq!(rep.budget, Some(*steps.last().unwrap()));
    }

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = [32.0, 64.0, 128.0, 256.0, 512.0]
            .iter()
            .map(|&n: &f64| (n, 35.0 * n.powf(1.14)))
            .collect();
        let f = fit_power_law(&pts).unwrap();
        assert!((f.c - 35.0).abs() < 1e-9 && (f.alpha - 1.14).abs() < 1e-9 && (f.r2 - 1.0).abs() < 1e-9);
        let two = fit_power_law(&[(3.0, 5.0), (7.0, 2.0)]).unwrap();
        assert_eq!(two.r2, 1.0);
        assert!(fit_power_law(&[(1.0, 0.0), (2.0, 1.0)]).is_err());
        assert!(fit_power_law(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn reports_serialize() {
        let rep = innovation_window(&series(&[1.0; 5]), &series(&[0.0; 5]), &OnsetCriterion::rule_default(), &OnsetCriterion::mem(0.35));
        let j = serde_json::to_string(&rep).unwrap();
        assert!(j.contains("\"tauRule\":10"));
        let back: ClockReport = serde_json::from_str(&j).unwrap();
        assert_eq!(back, rep);
    }
}
