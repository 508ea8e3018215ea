//! Rule families over discrete grids: parsing, sampling, verification,
//! exact counting, enumeration, encoding and memorization baselines.
//!
//! Binary families use the symbols `-1` and `+1`; categorical families
//! (Latin squares, Sudoku) use `0..n`. Grid families lay cells out row-major
//! with `D = n * n`.

mod baseline;
mod count;
mod dataset;
mod encode;
mod sample;
mod spec;
mod verify;

pub use baseline::{memorization_baselines, BaselineSet, DEFAULT_BASELINE_DRAWS};
pub(crate) use count::block_patterns;
pub use count::{count_valid, enumerate_valid, enumerate_valid_with_cap, DEFAULT_ENUM_CAP};
pub use dataset::{generate_dataset, Dataset};
pub use encode::{decode, decode_with_eps, encode, snap_epsilon, Decoded};
pub use sample::{sample_uniform_alphabet, sample_valid, sample_valid_counted, SUDOKU_REJECTION_BUDGET};
pub use spec::{Encoding, Family, RuleSpec};
pub use verify::{verify, verify_unchecked, ConstraintId, VerifyReport};

use serde::{Deserialize, Serialize};

/// One discrete sample: `D` symbols laid out row-major for grid families.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sample(pub Vec<i8>);

impl Sample {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    /// Number of positions where `self` and `other` differ.
    pub fn hamming(&self, other: &Sample) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl From<Vec<i8>> for Sample {
    fn from(v: Vec<i8>) -> Self {
        Sample(v)
    }
}

pub(crate) fn binomial(n: u128, k: u128) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact at every step: acc * (n - i) is divisible by (i + 1)
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}
