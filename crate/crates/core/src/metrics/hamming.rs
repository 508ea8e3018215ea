use serde::{Deserialize, Serialize};

use crate::rulekit::{Dataset, Sample};

/// Exact nearest-neighbour Hamming search over a training set.
///
/// Binary samples are packed into `u64` words and compared with popcount;
/// categorical samples are compared symbol by symbol.
#[derive(Clone, Debug)]
pub struct HammingIndex {
    binary: bool,
    words: usize,
    packed: Vec<u64>,
    raw: Vec<Sample>,
}

fn pack(s: &Sample, words: usize, out: &mut Vec<u64>) {
    let start = out.len();
    out.resize(start + words, 0);
    for (i, v) in s.0.iter().enumerate() {
        if *v > 0 {
            out[start + i / 64] |= 1 << (i % 64);
        }
    }
}

impl HammingIndex {
    pub fn new(dataset: &Dataset) -> Self {
        let binary = dataset.rule().is_binary();
        let words = dataset.rule().dim().div_ceil(64);
        let mut packed = Vec::new();
        if binary {
            packed.reserve(words * dataset.len());
            for s in dataset.samples() {
                pack(s, words, &mut packed);
            }
        }
        Self {
            binary,
            words,
            packed,
            raw: if binary { Vec::new() } else { dataset.samples().to_vec() },
        }
    }

    /// Distance from `s` to its nearest training sample.
    pub fn nearest(&self, s: &Sample) -> usize {
        if self.binary {
            let mut q = Vec::with_capacity(self.words);
            pack(s, self.words, &mut q);
            self.packed
                .chunks_exact(self.words)
                .map(|t| t.iter().zip(&q).map(|(a, b)| (a ^ b).count_ones() as usize).sum())
                .min()
                .unwrap_or(usize::MAX)
        } else {
            self.raw.iter().map(|t| t.hamming(s)).min().unwrap_or(usize::MAX)
        }
    }
}

/// Which generated samples enter a Hamming statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HammingSubset {
    All,
    Valid,
    ValidNovel,
}

/// Mean and median of nearest-training distances over a subset; both are
/// `None` when the subset is empty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HammingStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
}

impl HammingStats {
    pub fn from_distances(mut d: Vec<usize>) -> Self {
        if d.is_empty() {
            return Self::default();
        }
        d.sort_unstable();
        let k = d.len();
        let median = if k % 2 == 1 {
            d[k / 2] as f64
        } else {
            (d[k / 2 - 1] + d[k / 2]) as f64 / 2.0
        };
        let mean = d.iter().sum::<usize>() as f64 / k as f64;
        Self {
            count: k,
            mean: Some(mean),
            median: Some(median),
        }
    }
}

/// Nearest-training Hamming statistics for `batch`. `valid` marks
/// rule-valid entries; `ValidNovel` further drops exact training matches.
pub fn nearest_hamming(
    index: &HammingIndex,
    batch: &[Sample],
    valid: &[bool],
    subset: HammingSubset,
) -> HammingStats {
    let d: Vec<usize> = batch
        .iter()
        .zip(valid)
        .filter(|(_, v)| subset == HammingSubset::All || **v)
        .map(|(s, _)| index.nearest(s))
        .filter(|d| subset != HammingSubset::ValidNovel || *d > 0)
        .collect();
    HammingStats::from_distances(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulekit::{generate_dataset, sample_uniform_alphabet, RuleSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn training_sample_and_single_flip() {
        let r = RuleSpec::parity(12, 3).unwrap();
        let ds = generate_dataset(&r, 10, 0).unwrap();
        let idx = HammingIndex::new(&ds);
        let s = ds.samples()[3].clone();
        assert_eq!(idx.nearest(&s), 0);
        let mut f = s.clone();
        f.0[5] = -f.0[5];
        assert_eq!(idx.nearest(&f), 1);
    }

    #[test]
    fn packed_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for spec in ["parity:d=100,g=4", "latin:n=5"] {
            let r: RuleSpec = spec.parse().unwrap();
            let ds = generate_dataset(&r, 1000, 1).unwrap();
            let idx = HammingIndex::new(&ds);
            for _ in 0..1000 {
                let q = sample_uniform_alphabet(&r, &mut rng);
                let brute = ds.samples().iter().map(|t| t.hamming(&q)).min().unwrap();
                assert_eq!(idx.nearest(&q), brute);
            }
        }
    }

    #[test]
    fn subsets_and_empty() {
        let r = RuleSpec::parity(4, 2).unwrap();
        let ds = generate_dataset(&r, 2, 0).unwrap();
        let idx = HammingIndex::new(&ds);
        let batch = vec![ds.samples()[0].clone()];
        let st = nearest_hamming(&idx, &batch, &[true], HammingSubset::ValidNovel);
        assert_eq!(st.count, 0);
        assert!(st.mean.is_none());
        let st = nearest_hamming(&idx, &batch, &[true], HammingSubset::All);
        assert_eq!(st.mean, Some(0.0));
    }
}
