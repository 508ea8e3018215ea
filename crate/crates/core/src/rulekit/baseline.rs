use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{count_valid, sample_uniform_alphabet, sample_valid, verify_unchecked, Dataset, Family, Sample};
use crate::error::Result;

/// Monte Carlo draws for the group-level baselines.
pub const DEFAULT_BASELINE_DRAWS: usize = 100_000;

/// Reference memorization and chance levels for one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSet {
    /// `N / count_valid`: chance that a perfect rule learner reproduces a
    /// training sample.
    pub sample_mem_ground_truth: f64,
    /// `N / |A|^D`: the same for uniform draws over the alphabet.
    pub sample_mem_boolean_cube: f64,
    /// Fraction of groups of ground-truth draws found among training groups.
    pub group_mem_ground_truth: f64,
    /// Same for uniform draws over the alphabet.
    pub group_mem_boolean_cube: f64,
    pub chance_sample_acc: f64,
    pub chance_group_acc: f64,
    /// Closed-form approximation `min(2^(G-1), N·D/G) / 2^(G-1)` (parity
    /// only), kept for reference next to the Monte Carlo value.
    pub group_mem_reference_ground_truth: Option<f64>,
    /// `min(2^(G-1), N·D/G) / 2^G` (parity only).
    pub group_mem_reference_cube: Option<f64>,
    pub draws: usize,
    pub seed: u64,
}

/// Computes every baseline for `dataset`, using `draws` Monte Carlo samples
/// seeded by `seed` for the group-level and non-parity chance values.
pub fn memorization_baselines(dataset: &Dataset, draws: usize, seed: u64) -> Result<BaselineSet> {
    let rule = dataset.rule();
    let n = dataset.len() as f64;
    let d = rule.dim() as f64;
    let count = count_valid(rule)? as f64;
    let cube_size = (rule.alphabet_size() as f64).powf(d);

    let groups = rule.groups();
    let group_hits = |s: &Sample| {
        groups
            .iter()
            .enumerate()
            .filter(|(pos, g)| dataset.contains_group(&s.0[(*g).clone()], *pos, false))
            .count()
    };
    let total_groups = (draws * groups.len()) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth_hits = 0usize;
    for _ in 0..draws {
        truth_hits += group_hits(&sample_valid(rule, &mut rng)?);
    }
    let mut cube_hits = 0usize;
    let mut cube_constraints = 0usize;
    let mut cube_total_constraints = 0usize;
    for _ in 0..draws {
        let s = sample_uniform_alphabet(rule, &mut rng);
        cube_hits += group_hits(&s);
        let rep = verify_unchecked(rule, &s);
        cube_constraints += rep.satisfied();
        cube_total_constraints += rep.per_constraint.len();
    }

    let (chance_group_acc, reference) = match rule.family() {
        Family::GroupParity { g, .. } => {
            let patterns = 2f64.powi(*g as i32 - 1);
            let covered = patterns.min(n * d / *g as f64);
            (0.5, Some((covered / patterns, covered / (2.0 * patterns))))
        }
        _ => (cube_constraints as f64 / cube_total_constraints.max(1) as f64, None),
    };

    Ok(BaselineSet {
        sample_mem_ground_truth: n / count,
        sample_mem_boolean_cube: n / cube_size,
        group_mem_ground_truth: truth_hits as f64 / total_groups,
        group_mem_boolean_cube: cube_hits as f64 / total_groups,
        chance_sample_acc: count / cube_size,
        chance_group_acc,
        group_mem_reference_ground_truth: reference.map(|r| r.0),
        group_mem_reference_cube: reference.map(|r| r.1),
        draws,
        seed,
    })
}
