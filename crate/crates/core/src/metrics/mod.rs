//! Quantization, rule accuracy, memorization and per-sample state labels
//! for batches of generated vectors.

mod hamming;

pub use hamming::{nearest_hamming, HammingIndex, HammingStats, HammingSubset};

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rulekit::{decode_with_eps, verify_unchecked, Dataset, RuleSpec, Sample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuantConfig {
    pub epsilon_strict: f64,
    pub epsilon_loose: f64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            epsilon_strict: 0.01,
            epsilon_loose: 0.1,
        }
    }
}

impl QuantConfig {
    /// Both thresholds must be positive, ordered, and below half the
    /// smallest spacing between encoded symbols.
    pub fn validate(&self, rule: &RuleSpec) -> Result<()> {
        let half_gap = if rule.is_binary() || rule.encoding() != crate::rulekit::Encoding::Scalar {
            1.0
        } else {
            1.0 / (rule.alphabet_size() - 1) as f64
        };
        if !(self.epsilon_strict > 0.0 && self.epsilon_strict <= self.epsilon_loose) {
            return Err(Error::config(
                "epsilon_strict",
                "need 0 < epsilon_strict <= epsilon_loose",
            ));
        }
        if self.epsilon_loose >= half_gap {
            return Err(Error::config(
                "epsilon_loose",
                format!("must be below half the symbol spacing ({half_gap})"),
            ));
        }
        Ok(())
    }
}

/// Per-sample outcome, in decreasing precedence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateLabel {
    InvalidQuant,
    InvalidRule,
    ValidNovel,
    ValidMemorized,
}

impl StateLabel {
    pub const ALL: [StateLabel; 4] = [
        StateLabel::InvalidQuant,
        StateLabel::InvalidRule,
        StateLabel::ValidNovel,
        StateLabel::ValidMemorized,
    ];

    /// Stable integer code used in raster files.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Largest distance from any coordinate to its nearest symbol encoding;
/// `+inf` if any entry is non-finite. For binary scalar encodings this is
/// `max_i ||x_i| - 1|`.
pub fn linf_distance(rule: &RuleSpec, x: &[f64]) -> f64 {
    decode_with_eps(rule, x, f64::INFINITY).max_distance
}

#[derive(Clone, Debug, PartialEq)]
pub struct Binarized {
    pub sample: Sample,
    pub finite: bool,
    pub valid_loose: bool,
    pub valid_strict: bool,
}

/// Snaps each coordinate to its nearest symbol (sign for binary, ties to
/// `+1`) and reports the quantization flags.
pub fn binarize(rule: &RuleSpec, x: &[f64], q: &QuantConfig) -> Binarized {
    let d = decode_with_eps(rule, x, q.epsilon_loose);
    Binarized {
        sample: d.sample,
        finite: d.max_distance.is_finite(),
        valid_loose: d.max_distance <= q.epsilon_loose,
        valid_strict: d.max_distance <= q.epsilon_strict,
    }
}

/// Fraction of fully valid samples and fraction of satisfied constraints.
pub fn rule_accuracy(batch: &[Sample], rule: &RuleSpec) -> (f64, f64) {
    let (mut ok, mut sat, mut total) = (0usize, 0usize, 0usize);
    for s in batch {
        let rep = verify_unchecked(rule, s);
        ok += usize::from(rep.sample_valid);
        sat += rep.satisfied();
        total += rep.per_constraint.len();
    }
    (
        ok as f64 / batch.len().max(1) as f64,
        sat as f64 / total.max(1) as f64,
    )
}

/// Fraction of samples, and of groups, that exactly match training data.
pub fn memorization_ratio(batch: &[Sample], dataset: &Dataset, positional: bool) -> (f64, f64) {
    let groups = dataset.rule().groups();
    let (mut mem, mut gmem) = (0usize, 0usize);
    for s in batch {
        mem += usize::from(dataset.contains(s));
        gmem += groups
            .iter()
            .enumerate()
            .filter(|(pos, g)| dataset.contains_group(&s.0[(*g).clone()], *pos, positional))
            .count();
    }
    let b = batch.len().max(1) as f64;
    (mem as f64 / b, gmem as f64 / (b * groups.len() as f64))
}

fn label(rule: &RuleSpec, dataset: &Dataset, b: &Binarized) -> StateLabel {
    if !b.valid_loose {
        StateLabel::InvalidQuant
    } else if !verify_unchecked(rule, &b.sample).sample_valid {
        StateLabel::InvalidRule
    } else if dataset.contains(&b.sample) {
        StateLabel::ValidMemorized
    } else {
        StateLabel::ValidNovel
    }
}

/// One state label per row of `raw`.
pub fn classify_states(raw: ArrayView2<f64>, dataset: &Dataset, q: &QuantConfig) -> Vec<StateLabel> {
    let rule = dataset.rule();
    raw.outer_iter()
        .map(|row| {
            let x = row.to_vec();
            label(rule, dataset, &binarize(rule, &x, q))
        })
        .collect()
}

/// Options for [`evaluate_batch`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub quant: QuantConfig,
    pub group_match_positional: bool,
}

/// Metrics for one checkpoint's batch of generations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub step: u64,
    pub sample_acc: f64,
    pub group_acc: f64,
    pub sample_mem: f64,
    pub group_mem: f64,
    /// Fraction above the loose quantization threshold (includes non-finite).
    pub invalid_frac: f64,
    pub strict_invalid_frac: f64,
    pub nan_frac: f64,
    pub state_labels: Vec<StateLabel>,
    pub hamming_all: HammingStats,
    pub hamming_valid: HammingStats,
    pub hamming_valid_novel: HammingStats,
}

/// Column order of [`EvalSnapshot::csv_row`].
pub const SNAPSHOT_COLUMNS: &[&str] = &[
    "step",
    "sample_acc",
    "group_acc",
    "sample_mem",
    "group_mem",
    "invalid_frac",
    "strict_invalid_frac",
    "nan_frac",
    "n_invalid_quant",
    "n_invalid_rule",
    "n_valid_novel",
    "n_valid_memorized",
    "ham_all_mean",
    "ham_all_median",
    "ham_valid_mean",
    "ham_valid_median",
    "ham_novel_mean",
    "ham_novel_median",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalSnapshot {
    pub fn state_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for l in &self.state_labels {
            c[l.index()] += 1;
        }
        c
    }

    /// Values in [`SNAPSHOT_COLUMNS`] order; empty cells for undefined
    /// Hamming statistics.
    pub fn csv_row(&self) -> Vec<String> {
        let c = self.state_counts();
        let mut row = vec![
            self.step.to_string(),
            self.sample_acc.to_string(),
            self.group_acc.to_string(),
            self.sample_mem.to_string(),
            self.group_mem.to_string(),
            self.invalid_frac.to_string(),
            self.strict_invalid_frac.to_string(),
            self.nan_frac.to_string(),
        ];
        row.extend(c.iter().map(usize::to_string));
        for h in [&self.hamming_all, &self.hamming_valid, &self.hamming_valid_novel] {
            row.push(opt(h.mean));
            row.push(opt(h.median));
        }
        row
    }
}

/// Evaluates a batch of raw generations (one per row) against `dataset`.
///
/// Accuracy and memorization are measured on snapped samples; non-finite
/// rows count as failures for both.
pub fn evaluate_batch(
    step: u64,
    raw: ArrayView2<f64>,
    dataset: &Dataset,
    index: &HammingIndex,
    opts: &EvalOptions,
) -> EvalSnapshot {
    let rule = dataset.rule();
    let rows: Vec<Vec<f64>> = raw.outer_iter().map(|r| r.to_vec()).collect();
    let per: Vec<(Binarized, bool, StateLabel, usize)> = rows
        .par_iter()
        .map(|x| {
            let b = binarize(rule, x, &opts.quant);
            let valid = b.finite && verify_unchecked(rule, &b.sample).sample_valid;
            let l = label(rule, dataset, &b);
            let d = if b.finite { index.nearest(&b.sample) } else { usize::MAX };
            (b, valid, l, d)
        })
        .collect();

    let n = per.len().max(1) as f64;
    let frac = |f: &dyn Fn(&(Binarized, bool, StateLabel, usize)) -> bool| {
        per.iter().filter(|p| f(p)).count() as f64 / n
    };
    let finite: Vec<Sample> = per.iter().filter(|p| p.0.finite).map(|p| p.0.sample.clone()).collect();
    let (_, group_acc_f) = rule_accuracy(&finite, rule);
    let (_, group_mem_f) = memorization_ratio(&finite, dataset, opts.group_match_positional);
    let finite_share = finite.len() as f64 / n;

    let dists = |keep: &dyn Fn(&(Binarized, bool, StateLabel, usize)) -> bool| {
        HammingStats::from_distances(per.iter().filter(|p| p.0.finite && keep(p)).map(|p| p.3).collect())
    };

    EvalSnapshot {
        step,
        sample_acc: frac(&|p| p.1),
        group_acc: group_acc_f * finite_share,
        sample_mem: frac(&|p| p.1 && p.3 == 0),
        group_mem: group_mem_f * finite_share,
        invalid_frac: frac(&|p| !p.0.valid_loose),
        strict_invalid_frac: frac(&|p| !p.0.valid_strict),
        nan_frac: frac(&|p| !p.0.finite),
        state_labels: per.iter().map(|p| p.2).collect(),
        hamming_all: dists(&|_| true),
        hamming_valid: dists(&|p| p.1),
        hamming_valid_novel: dists(&|p| p.1 && p.3 > 0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulekit::{encode, enumerate_valid, generate_dataset, sample_uniform_alphabet, sample_valid};
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn parity(d: usize, g: usize) -> RuleSpec {
        RuleSpec::parity(d, g).unwrap()
    }

    #[test]
    fn linf_examples() {
        let r = parity(3, 3);
        assert_eq!(linf_distance(&r, &[1.0, -1.0, 1.0]), 0.0);
        let r2 = parity(2, 2);
        assert!((linf_distance(&r2, &[0.9, -1.05]) - 0.1).abs() < 1e-12);
        assert!(linf_distance(&r2, &[f64::NAN, 1.0]).is_infinite());
        let lat = RuleSpec::latin(3).unwrap();
        let x = [-1.0, 0.05, 1.0, 0.0, 1.0, -1.0, 1.0, -1.0, 0.0];
        assert!((linf_distance(&lat, &x) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn binarize_examples() {
        let r = parity(2, 2);
        let q = QuantConfig::default();
        let b = binarize(&r, &[0.97, -0.99], &q);
        assert_eq!(b.sample.0, vec![1, -1]);
        assert!(b.valid_loose && !b.valid_strict);
        let b = binarize(&r, &[0.0, 1.0], &q);
        assert_eq!(b.sample.0, vec![1, 1]);
        assert!(!b.valid_loose);
        let b = binarize(&r, &[1.0, -1.0], &q);
        assert!(b.valid_loose && b.valid_strict);
    }

    #[test]
    fn quant_config_validation() {
        let r = parity(4, 2);
        assert!(QuantConfig::default().validate(&r).is_ok());
        let bad = QuantConfig {
            epsilon_strict: 0.2,
            epsilon_loose: 0.1,
        };
        assert!(bad.validate(&r).is_err());
        let six = RuleSpec::latin(6).unwrap();
        let wide = QuantConfig {
            epsilon_strict: 0.01,
            epsilon_loose: 0.25,
        };
        assert!(wide.validate(&six).is_err());
    }

    #[test]
    fn accuracy_on_support_and_single_bad_group() {
        let r = parity(12, 3);
        assert_eq!(rule_accuracy(&enumerate_valid(&r).unwrap(), &r), (1.0, 1.0));
        let r = parity(36, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = sample_valid(&r, &mut rng).unwrap();
        s.0[0] = -s.0[0];
        let (sa, ga) = rule_accuracy(&[s], &r);
        assert_eq!(sa, 0.0);
        assert!((ga - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn memorization_of_training_set() {
        let r = parity(12, 2);
        let ds = generate_dataset(&r, 40, 0).unwrap();
        assert_eq!(memorization_ratio(ds.samples(), &ds, false), (1.0, 1.0));
        assert_eq!(memorization_ratio(ds.samples(), &ds, true), (1.0, 1.0));
        let idx = HammingIndex::new(&ds);
        let far: Vec<Sample> = enumerate_valid(&r)
            .unwrap()
            .into_iter()
            .filter(|s| idx.nearest(s) >= 1)
            .take(20)
            .collect();
        assert_eq!(memorization_ratio(&far, &ds, false).0, 0.0);
    }

    #[test]
    fn state_precedence() {
        let r = parity(4, 2);
        let ds = generate_dataset(&r, 2, 1).unwrap();
        let q = QuantConfig::default();
        let train = encode(&r, &ds.samples()[0]);
        let bad_group = vec![1.0, -1.0, 1.0, 1.0];
        let quant = vec![0.5, 1.0, 1.0, 1.0];
        let novel = enumerate_valid(&r)
            .unwrap()
            .into_iter()
            .find(|s| !ds.contains(s))
            .unwrap();
        let rows = [train, bad_group, quant, encode(&r, &novel)].concat();
        let raw = Array2::from_shape_vec((4, 4), rows).unwrap();
        let labels = classify_states(raw.view(), &ds, &q);
        assert_eq!(
            labels,
            vec![
                StateLabel::ValidMemorized,
                StateLabel::InvalidRule,
                StateLabel::InvalidQuant,
                StateLabel::ValidNovel
            ]
        );
    }

    fn three_sigma(p: f64, n: usize) -> f64 {
        3.0 * (p * (1.0 - p) / n as f64).sqrt()
    }

    #[test]
    fn cube_chance_levels() {
        let r = parity(36, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let batch: Vec<Sample> = (0..n).map(|_| sample_uniform_alphabet(&r, &mut rng)).collect();
        let (sa, ga) = rule_accuracy(&batch, &r);
        let p = 2f64.powi(-12);
        assert!((sa - p).abs() < three_sigma(p, n), "{sa}");
        // group outcomes: 12 per sample
        assert!((ga - 0.5).abs() < three_sigma(0.5, 12 * n), "{ga}");
    }

    #[test]
    fn ground_truth_memorization_matches_baseline() {
        let r = parity(36, 2);
        let ds = generate_dataset(&r, 4096, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let batch: Vec<Sample> = (0..n).map(|_| sample_valid(&r, &mut rng).unwrap()).collect();
        let (sm, _) = memorization_ratio(&batch, &ds, false);
        let p = 4096.0 / 2f64.powi(18);
        assert!((sm - p).abs() < three_sigma(p, n), "{sm}");
    }

    #[test]
    fn snapshot_invariants() {
        let r = parity(12, 3);
        let ds = generate_dataset(&r, 32, 0).unwrap();
        let idx = HammingIndex::new(&ds);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = Vec::new();
        for i in 0..200 {
            let s = match i % 3 {
                0 => ds.samples()[i % 32].clone(),
                1 => sample_valid(&r, &mut rng).unwrap(),
                _ => sample_uniform_alphabet(&r, &mut rng),
            };
            let mut v = encode(&r, &s);
            if i % 17 == 0 {
                v[0] = f64::NAN;
            } else if i % 13 == 0 {
                v[1] = 0.3;
            }
            rows.extend(v);
        }
        let raw = Array2::from_shape_vec((200, 12), rows).unwrap();
        let snap = evaluate_batch(7, raw.view(), &ds, &idx, &EvalOptions::default());
        assert_eq!(snap.state_labels.len(), 200);
        assert_eq!(snap.state_counts().iter().sum::<usize>(), 200);
        assert!(snap.sample_mem <= snap.sample_acc);
        assert!(snap.nan_frac > 0.0 && snap.nan_frac <= snap.invalid_frac);
        for v in [snap.sample_acc, snap.group_acc, snap.sample_mem, snap.group_mem] {
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(snap.csv_row().len(), SNAPSHOT_COLUMNS.len());
        // memorized labels are a subset of rule-valid samples
        let mem = snap.state_counts()[StateLabel::ValidMemorized.index()] as f64 / 200.0;
        assert!(mem <= snap.sample_mem + 1e-12);
    }
}
