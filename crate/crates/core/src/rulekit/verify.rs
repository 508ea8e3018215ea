use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Family, RuleSpec, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintId {
    Group(usize),
    Row(usize),
    Col(usize),
    Block(usize),
    Global,
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintId::Group(i) => write!(f, "group[{i}]"),
            ConstraintId::Row(i) => write!(f, "row[{i}]"),
            ConstraintId::Col(i) => write!(f, "col[{i}]"),
            ConstraintId::Block(i) => write!(f, "block[{i}]"),
            ConstraintId::Global => write!(f, "global"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub sample_valid: bool,
    pub per_constraint: Vec<(ConstraintId, bool)>,
}

impl VerifyReport {
    fn from_constraints(per_constraint: Vec<(ConstraintId, bool)>) -> Self {
        let sample_valid = per_constraint.iter().all(|(_, ok)| *ok);
        Self {
            sample_valid,
            per_constraint,
        }
    }

    pub fn satisfied(&self) -> usize {
        self.per_constraint.iter().filter(|(_, ok)| *ok).count()
    }
}

/// Checks every constraint of `rule` on `s`.
///
/// Fails only when `s` has the wrong length or uses symbols outside the
/// rule's alphabet.
pub fn verify(rule: &RuleSpec, s: &Sample) -> Result<VerifyReport> {
    check_alphabet(rule, s)?;
    Ok(verify_unchecked(rule, s))
}

pub(crate) fn check_alphabet(rule: &RuleSpec, s: &Sample) -> Result<()> {
    if s.len() != rule.dim() {
        return Err(Error::Alphabet(format!(
            "length {} does not match D={}",
            s.len(),
            rule.dim()
        )));
    }
    let ok = if rule.is_binary() {
        s.0.iter().all(|v| *v == 1 || *v == -1)
    } else {
        let n = rule.alphabet_size() as i8;
        s.0.iter().all(|v| (0..n).contains(v))
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Alphabet(format!(
            "symbols outside {:?} for {rule}",
            rule.alphabet()
        )))
    }
}

/// As [`verify`] but assumes the alphabet was already checked.
pub fn verify_unchecked(rule: &RuleSpec, s: &Sample) -> VerifyReport {
    let v = s.values();
    let plus = |cells: &[i8]| cells.iter().filter(|x| **x == 1).count();
    let per = match rule.family() {
        Family::GroupParity { g, .. } => v
            .chunks(*g)
            .enumerate()
            .map(|(i, grp)| {
                let odd = grp.iter().filter(|x| **x == -1).count() % 2 == 1;
                (ConstraintId::Group(i), !odd)
            })
            .collect(),
        Family::ExactK { k, .. } => vec![(ConstraintId::Global, plus(v) == *k)],
        Family::RowK { n, k } => v
            .chunks(*n)
            .enumerate()
            .map(|(r, row)| (ConstraintId::Row(r), plus(row) == *k))
            .collect(),
        Family::RowVariableK { n, kset } => v
            .chunks(*n)
            .enumerate()
            .map(|(r, row)| (ConstraintId::Row(r), kset.contains(&plus(row))))
            .collect(),
        Family::GlobalK { n, kset } => {
            let counts: Vec<usize> = v.chunks(*n).map(plus).collect();
            let mut per: Vec<_> = counts
                .iter()
                .enumerate()
                .map(|(r, c)| (ConstraintId::Row(r), kset.contains(c)))
                .collect();
            per.push((
                ConstraintId::Global,
                counts.windows(2).all(|w| w[0] == w[1]),
            ));
            per
        }
        Family::RowOnlyLatin { n } => rows(v, *n),
        Family::LatinSquare { n } => {
            let mut per = rows(v, *n);
            per.extend(cols(v, *n));
            per
        }
        Family::Sudoku {
            n,
            block_rows,
            block_cols,
        } => {
            let mut per = rows(v, *n);
            per.extend(cols(v, *n));
            per.extend(blocks(v, *n, *block_rows, *block_cols));
            per
        }
    };
    VerifyReport::from_constraints(per)
}

fn all_distinct(n: usize, cells: impl Iterator<Item = i8>) -> bool {
    let mut seen = vec![false; n];
    for c in cells {
        let c = c as usize;
        if c >= n || seen[c] {
            return false;
        }
        seen[c] = true;
    }
    true
}

fn rows(v: &[i8], n: usize) -> Vec<(ConstraintId, bool)> {
    (0..n)
        .map(|r| {
            let ok = all_distinct(n, v[r * n..(r + 1) * n].iter().copied());
            (ConstraintId::Row(r), ok)
        })
        .collect()
}

fn cols(v: &[i8], n: usize) -> Vec<(ConstraintId, bool)> {
    (0..n)
        .map(|c| {
            let ok = all_distinct(n, (0..n).map(|r| v[r * n + c]));
            (ConstraintId::Col(c), ok)
        })
        .collect()
}

fn blocks(v: &[i8], n: usize, br: usize, bc: usize) -> Vec<(ConstraintId, bool)> {
    let per_row = n / bc;
    (0..n)
        .map(|b| {
            let (r0, c0) = ((b / per_row) * br, (b % per_row) * bc);
            let cells = (0..br).flat_map(|i| (0..bc).map(move |j| v[(r0 + i) * n + c0 + j]));
            (ConstraintId::Block(b), all_distinct(n, cells))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[i8]) -> Sample {
        Sample(v.to_vec())
    }

    #[test]
    fn parity_groups() {
        let r = RuleSpec::parity(6, 3).unwrap();
        let rep = verify(&r, &s(&[1, 1, 1, -1, 1, -1])).unwrap();
        assert!(rep.sample_valid);
        assert_eq!(rep.per_constraint.len(), 2);

        let rep = verify(&r, &s(&[1, 1, -1, 1, 1, 1])).unwrap();
        assert!(!rep.sample_valid);
        assert_eq!(rep.per_constraint[0], (ConstraintId::Group(0), false));
        assert_eq!(rep.per_constraint[1], (ConstraintId::Group(1), true));
    }

    #[test]
    fn cyclic_latin_square_is_valid() {
        let r = RuleSpec::latin(3).unwrap();
        let rep = verify(&r, &s(&[0, 1, 2, 1, 2, 0, 2, 0, 1])).unwrap();
        assert!(rep.sample_valid);
        assert_eq!(rep.per_constraint.len(), 6);
        let rep = verify(&r, &s(&[0, 1, 2, 0, 2, 1, 2, 0, 1])).unwrap();
        assert!(!rep.sample_valid);
        assert_eq!(rep.satisfied(), 4);
    }

    #[test]
    fn sudoku_blocks() {
        let r = RuleSpec::sudoku(4, 2, 2).unwrap();
        let good = [0, 1, 2, 3, 2, 3, 0, 1, 1, 0, 3, 2, 3, 2, 1, 0];
        assert!(verify(&r, &s(&good)).unwrap().sample_valid);
        // Latin but the top-left block holds {0,1,1,2}
        let latin_only = [0, 1, 2, 3, 1, 2, 3, 0, 2, 3, 0, 1, 3, 0, 1, 2];
        let rep = verify(&r, &s(&latin_only)).unwrap();
        assert!(!rep.sample_valid);
        assert!(rep
            .per_constraint
            .iter()
            .all(|(id, ok)| *ok || matches!(id, ConstraintId::Block(_))));
    }

    #[test]
    fn exact_k_has_single_global_constraint() {
        let r = RuleSpec::exact_k(4, 2).unwrap();
        let rep = verify(&r, &s(&[1, -1, 1, -1])).unwrap();
        assert_eq!(rep.per_constraint, vec![(ConstraintId::Global, true)]);
    }

    #[test]
    fn global_k_requires_shared_count() {
        let r: RuleSpec = "globalk:n=2,kset=0/1".parse().unwrap();
        assert!(verify(&r, &s(&[1, -1, -1, 1])).unwrap().sample_valid);
        let rep = verify(&r, &s(&[1, -1, -1, -1])).unwrap();
        assert!(!rep.sample_valid);
        assert_eq!(rep.per_constraint.last(), Some(&(ConstraintId::Global, false)));
    }

    #[test]
    fn alphabet_and_length_errors() {
        let r = RuleSpec::parity(6, 3).unwrap();
        assert!(verify(&r, &s(&[1, 1, 1])).is_err());
        assert!(verify(&r, &s(&[1, 1, 1, 0, 1, 1])).is_err());
        let l = RuleSpec::latin(3).unwrap();
        assert!(verify(&l, &s(&[0, 1, 2, 1, 2, 0, 2, 0, 3])).is_err());
    }
}
