use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A rule family with its dimensional parameters.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    /// `d` bits split into contiguous groups of `g`, each with product `+1`.
    GroupParity { d: usize, g: usize },
    /// Exactly `k` of the `d` bits equal `+1`.
    ExactK { d: usize, k: usize },
    /// Every row of an `n x n` grid has exactly `k` entries equal to `+1`.
    RowK { n: usize, k: usize },
    /// Every row independently has a `+1` count drawn from `kset`.
    RowVariableK { n: usize, kset: Vec<usize> },
    /// All rows share a single `+1` count taken from `kset`.
    GlobalK { n: usize, kset: Vec<usize> },
    /// Every row is a permutation of `0..n`.
    RowOnlyLatin { n: usize },
    /// Rows and columns are permutations of `0..n`.
    LatinSquare { n: usize },
    /// Latin square whose `block_rows x block_cols` blocks also hold every symbol.
    Sudoku { n: usize, block_rows: usize, block_cols: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    #[default]
    Scalar,
    OneHot,
    OneHotZeroMean,
}

/// A validated rule family plus the real-valued encoding used by models.
///
/// Round-trips through a compact string form, e.g. `parity:d=36,g=6`,
/// `exactk:d=36,k=3`, `rowvark:n=6,kset=1/5`, `sudoku:n=6,block=2x3`,
/// optionally suffixed with `,enc=onehot0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RuleSpec {
    family: Family,
    encoding: Encoding,
}

impl RuleSpec {
    pub fn new(family: Family, encoding: Encoding) -> Result<Self> {
        validate(&family)?;
        Ok(Self { family, encoding })
    }

    pub fn parity(d: usize, g: usize) -> Result<Self> {
        Self::new(Family::GroupParity { d, g }, Encoding::Scalar)
    }

    pub fn exact_k(d: usize, k: usize) -> Result<Self> {
        Self::new(Family::ExactK { d, k }, Encoding::Scalar)
    }

    pub fn latin(n: usize) -> Result<Self> {
        Self::new(Family::LatinSquare { n }, Encoding::Scalar)
    }

    pub fn sudoku(n: usize, block_rows: usize, block_cols: usize) -> Result<Self> {
        Self::new(
            Family::Sudoku {
                n,
                block_rows,
                block_cols,
            },
            Encoding::Scalar,
        )
    }

    pub fn with_encoding(mut self, encoding: Encoding) -> Self {
        self.encoding = encoding;
        self
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    /// Total element count `D`.
    pub fn dim(&self) -> usize {
        match &self.family {
            Family::GroupParity { d, .. } | Family::ExactK { d, .. } => *d,
            Family::RowK { n, .. }
            | Family::RowVariableK { n, .. }
            | Family::GlobalK { n, .. }
            | Family::RowOnlyLatin { n }
            | Family::LatinSquare { n }
            | Family::Sudoku { n, .. } => n * n,
        }
    }

    /// Grid side for grid families.
    pub fn side(&self) -> Option<usize> {
        match &self.family {
            Family::GroupParity { .. } | Family::ExactK { .. } => None,
            Family::RowK { n, .. }
            | Family::RowVariableK { n, .. }
            | Family::GlobalK { n, .. }
            | Family::RowOnlyLatin { n }
            | Family::LatinSquare { n }
            | Family::Sudoku { n, .. } => Some(*n),
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(
            self.family,
            Family::GroupParity { .. }
                | Family::ExactK { .. }
                | Family::RowK { .. }
                | Family::RowVariableK { .. }
                | Family::GlobalK { .. }
        )
    }

    /// Symbols in lexicographic order (`-1 < +1`, `0 < 1 < ...`).
    pub fn alphabet(&self) -> Vec<i8> {
        if self.is_binary() {
            vec![-1, 1]
        } else {
            (0..self.side().unwrap_or(0) as i8).collect()
        }
    }

    pub fn alphabet_size(&self) -> usize {
        if self.is_binary() {
            2
        } else {
            self.side().unwrap_or(0)
        }
    }

    /// Dimension of the real-valued encoding.
    pub fn encoded_dim(&self) -> usize {
        match self.encoding {
            Encoding::Scalar => self.dim(),
            Encoding::OneHot | Encoding::OneHotZeroMean => self.dim() * self.alphabet_size(),
        }
    }

    /// Width of one cell in the encoded vector.
    pub fn cell_width(&self) -> usize {
        match self.encoding {
            Encoding::Scalar => 1,
            Encoding::OneHot | Encoding::OneHotZeroMean => self.alphabet_size(),
        }
    }

    /// Contiguous position ranges used for group-level memorization: parity
    /// groups, grid rows, or the whole vector for exact-K.
    pub fn groups(&self) -> Vec<Range<usize>> {
        match &self.family {
            Family::GroupParity { d, g } => (0..d / g).map(|i| i * g..(i + 1) * g).collect(),
            Family::ExactK { d, .. } => vec![0..*d],
            _ => {
                let n = self.side().unwrap_or(0);
                (0..n).map(|r| r * n..(r + 1) * n).collect()
            }
        }
    }

    /// Independent factors of the uniform valid measure, when it is a product
    /// measure over contiguous blocks. Each block's valid patterns are the
    /// same set.
    pub fn product_blocks(&self) -> Option<Vec<Range<usize>>> {
        match &self.family {
            Family::GroupParity { .. }
            | Family::RowK { .. }
            | Family::RowVariableK { .. }
            | Family::RowOnlyLatin { .. } => Some(self.groups()),
            _ => None,
        }
    }
}

fn validate(family: &Family) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidRule(msg));
    match family {
        Family::GroupParity { d, g } => {
            if *d == 0 || *g == 0 {
                return bad("parity needs d > 0 and g > 0".into());
            }
            if d % g != 0 {
                return bad(format!("group size g={g} does not divide d={d}"));
            }
        }
        Family::ExactK { d, k } => {
            if *d == 0 {
                return bad("exact-K needs d > 0".into());
            }
            if k > d {
                return bad(format!("k={k} exceeds d={d}"));
            }
        }
        Family::RowK { n, k } => {
            if *n == 0 {
                return bad("row-K needs n > 0".into());
            }
            if k > n {
                return bad(format!("k={k} exceeds n={n}"));
            }
        }
        Family::RowVariableK { n, kset } | Family::GlobalK { n, kset } => {
            if *n == 0 {
                return bad("row-K variants need n > 0".into());
            }
            if kset.is_empty() {
                return bad("kset must be nonempty".into());
            }
            if let Some(k) = kset.iter().find(|k| **k > *n) {
                return bad(format!("kset entry {k} exceeds n={n}"));
            }
            let mut sorted = kset.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted != *kset {
                return bad("kset must be strictly increasing".into());
            }
        }
        Family::RowOnlyLatin { n } | Family::LatinSquare { n } => {
            if !(2..=64).contains(n) {
                return bad(format!("grid side n={n} must lie in 2..=64"));
            }
        }
        Family::Sudoku {
            n,
            block_rows,
            block_cols,
        } => {
            if !(2..=64).contains(n) {
                return bad(format!("grid side n={n} must lie in 2..=64"));
            }
            if block_rows * block_cols != *n {
                return bad(format!(
                    "block shape {block_rows}x{block_cols} does not tile n={n}"
                ));
            }
        }
    }
    Ok(())
}

/// Default Sudoku blocks: the most square factorisation with rows <= cols.
pub(crate) fn default_block(n: usize) -> (usize, usize) {
    let mut rows = 1;
    for r in 1..=n {
        if r * r > n {
            break;
        }
        if n % r == 0 {
            rows = r;
        }
    }
    (rows, n / rows)
}

impl fmt::Display for RuleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kset = |ks: &[usize]| {
            ks.iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join("/")
        };
        match &self.family {
            Family::GroupParity { d, g } => write!(f, "parity:d={d},g={g}")?,
            Family::ExactK { d, k } => write!(f, "exactk:d={d},k={k}")?,
            Family::RowK { n, k } => write!(f, "rowk:n={n},k={k}")?,
            Family::RowVariableK { n, kset: ks } => write!(f, "rowvark:n={n},kset={}", kset(ks))?,
            Family::GlobalK { n, kset: ks } => write!(f, "globalk:n={n},kset={}", kset(ks))?,
            Family::RowOnlyLatin { n } => write!(f, "rowlatin:n={n}")?,
            Family::LatinSquare { n } => write!(f, "latin:n={n}")?,
            Family::Sudoku {
                n,
                block_rows,
                block_cols,
            } => write!(f, "sudoku:n={n},block={block_rows}x{block_cols}")?,
        }
        match self.encoding {
            Encoding::Scalar => Ok(()),
            Encoding::OneHot => write!(f, ",enc=onehot"),
            Encoding::OneHotZeroMean => write!(f, ",enc=onehot0"),
        }
    }
}

impl FromStr for RuleSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::InvalidRule(format!("`{s}`: {msg}"));
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut d = None;
        let mut g = None;
        let mut k = None;
        let mut n = None;
        let mut kset = None;
        let mut block = None;
        let mut encoding = Encoding::Scalar;
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{part}`")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| bad(format!("`{key}` is not a nonnegative integer: `{v}`")))
            };
            match key.trim() {
                "d" => d = Some(num(value)?),
                "g" => g = Some(num(value)?),
                "k" => k = Some(num(value)?),
                "n" => n = Some(num(value)?),
                "kset" => {
                    kset = Some(
                        value
                            .split('/')
                            .map(num)
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "block" => {
                    let (r, c) = value
                        .split_once('x')
                        .ok_or_else(|| bad(format!("block must look like 2x3, got `{value}`")))?;
                    block = Some((num(r)?, num(c)?));
                }
                "enc" => {
                    encoding = match value.trim() {
                        "scalar" => Encoding::Scalar,
                        "onehot" => Encoding::OneHot,
                        "onehot0" => Encoding::OneHotZeroMean,
                        other => return Err(bad(format!("unknown encoding `{other}`"))),
                    }
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let need = |v: Option<usize>, key: &str| v.ok_or_else(|| bad(format!("missing `{key}`")));
        let family = match name.trim() {
            "parity" => Family::GroupParity {
                d: need(d, "d")?,
                g: need(g, "g")?,
            },
            "exactk" => Family::ExactK {
                d: need(d, "d")?,
                k: need(k, "k")?,
            },
            "rowk" => Family::RowK {
                n: need(n, "n")?,
                k: need(k, "k")?,
            },
            "rowvark" => Family::RowVariableK {
                n: need(n, "n")?,
                kset: kset.ok_or_else(|| bad("missing `kset`".into()))?,
            },
            "globalk" => Family::GlobalK {
                n: need(n, "n")?,
                kset: kset.ok_or_else(|| bad("missing `kset`".into()))?,
            },
            "rowlatin" => Family::RowOnlyLatin { n: need(n, "n")? },
            "latin" => Family::LatinSquare { n: need(n, "n")? },
            "sudoku" => {
                let n = need(n, "n")?;
                let (block_rows, block_cols) = block.unwrap_or_else(|| default_block(n));
                Family::Sudoku {
                    n,
                    block_rows,
                    block_cols,
                }
            }
            other => return Err(bad(format!("unknown rule family `{other}`"))),
        };
        RuleSpec::new(family, encoding)
    }
}

impl TryFrom<String> for RuleSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RuleSpec> for String {
    fn from(r: RuleSpec) -> String {
        r.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_strings_round_trip() {
        for s in [
            "parity:d=36,g=6",
            "exactk:d=36,k=3",
            "rowk:n=6,k=2",
            "rowvark:n=6,kset=1/5",
            "globalk:n=6,kset=3/4",
            "rowlatin:n=6",
            "latin:n=5,enc=onehot",
            "sudoku:n=6,block=2x3,enc=onehot0",
        ] {
            let r: RuleSpec = s.parse().unwrap();
            assert_eq!(r.to_string(), s);
        }
    }

    #[test]
    fn sudoku_defaults_to_two_by_three() {
        let r: RuleSpec = "sudoku:n=6".parse().unwrap();
        assert_eq!(
            r.family(),
            &Family::Sudoku {
                n: 6,
                block_rows: 2,
                block_cols: 3
            }
        );
        assert_eq!(default_block(4), (2, 2));
        assert_eq!(default_block(9), (3, 3));
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(RuleSpec::parity(36, 5).is_err());
        assert!(RuleSpec::exact_k(4, 5).is_err());
        assert!("rowk:n=6,k=7".parse::<RuleSpec>().is_err());
        assert!("rowvark:n=6,kset=".parse::<RuleSpec>().is_err());
        assert!("globalk:n=6,kset=2/9".parse::<RuleSpec>().is_err());
        assert!("sudoku:n=6,block=2x2".parse::<RuleSpec>().is_err());
        assert!("parity:d=12".parse::<RuleSpec>().is_err());
        assert!("bogus:d=12".parse::<RuleSpec>().is_err());
    }

    #[test]
    fn parse_error_names_the_field() {
        let err = "parity:d=12,g=x".parse::<RuleSpec>().unwrap_err();
        assert!(err.to_string().contains("`g`"), "{err}");
    }

    #[test]
    fn groups_and_blocks() {
        let r = RuleSpec::parity(6, 3).unwrap();
        assert_eq!(r.groups(), vec![0..3, 3..6]);
        assert_eq!(r.product_blocks(), Some(vec![0..3, 3..6]));
        assert!(RuleSpec::latin(4).unwrap().product_blocks().is_none());
        let oh = RuleSpec::latin(4).unwrap().with_encoding(Encoding::OneHot);
        assert_eq!(oh.encoded_dim(), 64);
    }
}
