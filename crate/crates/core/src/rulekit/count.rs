use super::{binomial, Family, RuleSpec, Sample};
use crate::error::{Error, Result};

/// Default maximum support size that [`enumerate_valid`] will materialise.
pub const DEFAULT_ENUM_CAP: u128 = 1 << 24;

/// Largest Latin-square side counted by exhaustive search.
const LATIN_BRUTE_FORCE_MAX: usize = 4;

/// Exact number of rule-valid samples.
///
/// Latin squares with `n <= 4` and 4x4 Sudoku are counted by exhaustive
/// search; `n = 5, 6` Latin squares and the 6x6 Sudoku with 2x3 blocks come
/// from stored constants. Anything else is an error rather than an estimate.
pub fn count_valid(rule: &RuleSpec) -> Result<u128> {
    let overflow = || Error::Unsupported(format!("count for {rule} overflows u128"));
    let pow = |base: u128, exp: usize| -> Result<u128> {
        let exp = u32::try_from(exp).map_err(|_| overflow())?;
        base.checked_pow(exp).ok_or_else(overflow)
    };
    match rule.family() {
        Family::GroupParity { d, g } => {
            let per_group = 1u128.checked_shl((*g - 1) as u32).filter(|_| *g <= 127);
            pow(per_group.ok_or_else(overflow)?, d / g)
        }
        Family::ExactK { d, k } => binomial(*d as u128, *k as u128).ok_or_else(overflow),
        Family::RowK { n, k } => pow(binomial(*n as u128, *k as u128).ok_or_else(overflow)?, *n),
        Family::RowVariableK { n, kset } => {
            let per_row = row_patterns(*n, kset).ok_or_else(overflow)?;
            pow(per_row, *n)
        }
        Family::GlobalK { n, kset } => kset.iter().try_fold(0u128, |acc, k| {
            let per_row = binomial(*n as u128, *k as u128).ok_or_else(overflow)?;
            acc.checked_add(pow(per_row, *n)?).ok_or_else(overflow)
        }),
        Family::RowOnlyLatin { n } => {
            let fact = (1..=*n as u128)
                .try_fold(1u128, |acc, i| acc.checked_mul(i))
                .ok_or_else(overflow)?;
            pow(fact, *n)
        }
        Family::LatinSquare { n } => match n {
            n if *n <= LATIN_BRUTE_FORCE_MAX => Ok(count_by_search(rule)),
            5 => Ok(161_280),
            6 => Ok(812_851_200),
            _ => Err(Error::Unsupported(format!(
                "no exact Latin-square count stored for n={n}"
            ))),
        },
        Family::Sudoku {
            n,
            block_rows,
            block_cols,
        } => match (n, block_rows, block_cols) {
            (n, _, _) if *n <= LATIN_BRUTE_FORCE_MAX => Ok(count_by_search(rule)),
            (6, 2, 3) | (6, 3, 2) => Ok(28_200_960),
            _ => Err(Error::Unsupported(format!(
                "no exact Sudoku count stored for n={n}, blocks {block_rows}x{block_cols}"
            ))),
        },
    }
}

fn row_patterns(n: usize, kset: &[usize]) -> Option<u128> {
    kset.iter()
        .try_fold(0u128, |acc, k| acc.checked_add(binomial(n as u128, *k as u128)?))
}

fn count_by_search(rule: &RuleSpec) -> u128 {
    let mut count = 0u128;
    backtrack(rule, rule.dim(), &mut |_| count += 1);
    count
}

/// All valid samples in lexicographic order, refusing supports above
/// [`DEFAULT_ENUM_CAP`].
pub fn enumerate_valid(rule: &RuleSpec) -> Result<Vec<Sample>> {
    enumerate_valid_with_cap(rule, DEFAULT_ENUM_CAP)
}

pub fn enumerate_valid_with_cap(rule: &RuleSpec, cap: u128) -> Result<Vec<Sample>> {
    let count = count_valid(rule)?;
    if count > cap {
        return Err(Error::EnumerationCap { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    backtrack(rule, rule.dim(), &mut |prefix| out.push(Sample(prefix.to_vec())));
    debug_assert_eq!(out.len() as u128, count);
    Ok(out)
}

/// Valid patterns of a single product block (one parity group or one row),
/// in lexicographic order.
pub(crate) fn block_patterns(rule: &RuleSpec, cap: u128) -> Result<Vec<Vec<i8>>> {
    let blocks = rule
        .product_blocks()
        .ok_or_else(|| Error::Unsupported(format!("{rule} is not a product rule")))?;
    let width = blocks[0].len();
    let alphabet = rule.alphabet_size() as u128;
    let bound = alphabet.checked_pow(width as u32).unwrap_or(u128::MAX);
    // patterns of one block are at most alphabet^width; the real count is
    // usually far smaller but this keeps the guard simple.
    if bound > cap.saturating_mul(64) {
        return Err(Error::EnumerationCap { count: bound, cap });
    }
    let mut out = Vec::new();
    backtrack(rule, width, &mut |prefix| out.push(prefix.to_vec()));
    Ok(out)
}

/// Depth-first search over positions `0..len` trying symbols in
/// lexicographic order, pruning with the rule's incremental feasibility
/// check. Visits complete prefixes of length `len` in lexicographic order.
fn backtrack(rule: &RuleSpec, len: usize, visit: &mut dyn FnMut(&[i8])) {
    let alphabet = rule.alphabet();
    let mut prefix = Vec::with_capacity(len);
    fn go(
        rule: &RuleSpec,
        alphabet: &[i8],
        len: usize,
        prefix: &mut Vec<i8>,
        visit: &mut dyn FnMut(&[i8]),
    ) {
        if prefix.len() == len {
            visit(prefix);
            return;
        }
        for &sym in alphabet {
            prefix.push(sym);
            if feasible(rule, prefix) {
                go(rule, alphabet, len, prefix, visit);
            }
            prefix.pop();
        }
    }
    go(rule, &alphabet, len, &mut prefix, visit);
}

/// Whether `prefix` (whose last element was just placed) can still be
/// completed to a valid sample. Exact at block/row boundaries.
fn feasible(rule: &RuleSpec, prefix: &[i8]) -> bool {
    let p = prefix.len() - 1;
    let plus = |cells: &[i8]| cells.iter().filter(|x| **x == 1).count();
    match rule.family() {
        Family::GroupParity { g, .. } => {
            if (p + 1) % g != 0 {
                return true;
            }
            let grp = &prefix[p + 1 - g..=p];
            grp.iter().filter(|x| **x == -1).count() % 2 == 0
        }
        Family::ExactK { d, k } => {
            let c = plus(prefix);
            c <= *k && c + (d - prefix.len()) >= *k
        }
        Family::RowK { n, k } => {
            let (r, c) = (p / n, p % n);
            let cnt = plus(&prefix[r * n..=p]);
            cnt <= *k && cnt + (n - c - 1) >= *k
        }
        Family::RowVariableK { n, kset } => {
            let (r, c) = (p / n, p % n);
            let cnt = plus(&prefix[r * n..=p]);
            let rem = n - c - 1;
            kset.iter().any(|k| cnt <= *k && cnt + rem >= *k)
        }
        Family::GlobalK { n, kset } => {
            let (r, c) = (p / n, p % n);
            let cnt = plus(&prefix[r * n..=p]);
            let rem = n - c - 1;
            if r == 0 {
                kset.iter().any(|k| cnt <= *k && cnt + rem >= *k)
            } else {
                let k = plus(&prefix[0..*n]);
                cnt <= k && cnt + rem >= k
            }
        }
        Family::RowOnlyLatin { n } => {
            let (r, _) = (p / n, p % n);
            !prefix[r * n..p].contains(&prefix[p])
        }
        Family::LatinSquare { n } => latin_ok(prefix, *n),
        Family::Sudoku {
            n,
            block_rows,
            block_cols,
        } => {
            if !latin_ok(prefix, *n) {
                return false;
            }
            let (r, c) = (p / n, p % n);
            let (r0, c0) = (r - r % block_rows, c - c % block_cols);
            for i in r0..=r {
                for j in c0..c0 + block_cols {
                    let q = i * n + j;
                    if q < p && prefix[q] == prefix[p] {
                        return false;
                    }
                }
            }
            true
        }
    }
}

fn latin_ok(prefix: &[i8], n: usize) -> bool {
    let p = prefix.len() - 1;
    let (r, c) = (p / n, p % n);
    let v = prefix[p];
    if prefix[r * n..p].contains(&v) {
        return false;
    }
    (0..r).all(|i| prefix[i * n + c] != v)
}
