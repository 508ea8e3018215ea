use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    count_valid, encode, enumerate_valid, sample_valid, verify, RuleSpec, Sample, DEFAULT_ENUM_CAP,
};
use crate::error::{Error, Result};

const FORMAT: &str = "lab-dataset";
const VERSION: u32 = 1;

/// A fixed training set of distinct rule-valid samples with exact-match
/// indices over full samples and over group patterns.
#[derive(Clone, Debug)]
pub struct Dataset {
    rule: RuleSpec,
    samples: Vec<Sample>,
    seed: u64,
    sample_index: HashSet<Sample>,
    /// Group pattern -> sorted group positions it was seen at.
    group_index: HashMap<Vec<i8>, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    rule: RuleSpec,
    n: usize,
    seed: u64,
}

impl Dataset {
    /// Builds a dataset from explicit samples, checking validity and
    /// uniqueness.
    pub fn from_samples(rule: RuleSpec, samples: Vec<Sample>, seed: u64) -> Result<Self> {
        let mut sample_index = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if !verify(&rule, s)?.sample_valid {
                return Err(Error::InvalidRule(format!("dataset sample {i} violates {rule}")));
            }
            if !sample_index.insert(s.clone()) {
                return Err(Error::InvalidRule(format!("dataset sample {i} is a duplicate")));
            }
        }
        let mut group_index: HashMap<Vec<i8>, Vec<usize>> = HashMap::new();
        let groups = rule.groups();
        for s in &samples {
            for (pos, range) in groups.iter().enumerate() {
                let seen = group_index.entry(s.0[range.clone()].to_vec()).or_default();
                if let Err(at) = seen.binary_search(&pos) {
                    seen.insert(at, pos);
                }
            }
        }
        Ok(Self {
            rule,
            samples,
            seed,
            sample_index,
            group_index,
        })
    }

    pub fn rule(&self) -> &RuleSpec {
        &self.rule
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn contains(&self, s: &Sample) -> bool {
        self.sample_index.contains(s)
    }

    /// Whether `pattern` occurs as a training group. With `positional`, it
    /// must occur at group position `pos`.
    pub fn contains_group(&self, pattern: &[i8], pos: usize, positional: bool) -> bool {
        match self.group_index.get(pattern) {
            None => false,
            Some(_) if !positional => true,
            Some(at) => at.binary_search(&pos).is_ok(),
        }
    }

    /// Number of distinct group patterns seen in training.
    pub fn distinct_groups(&self) -> usize {
        self.group_index.len()
    }

    /// Samples encoded under the rule's encoding, one row each.
    pub fn encoded(&self) -> Array2<f64> {
        encode_rows(&self.rule, &self.samples)
    }

    /// Up to `m` distinct valid samples absent from the dataset. Returns
    /// fewer only when the complement of the dataset is smaller than `m`.
    pub fn held_out<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<Sample>> {
        let count = count_valid(&self.rule)?;
        let free = count - self.len() as u128;
        if free <= 2 * m as u128 && count <= DEFAULT_ENUM_CAP {
            let mut rest: Vec<Sample> = enumerate_valid(&self.rule)?
                .into_iter()
                .filter(|s| !self.contains(s))
                .collect();
            rest.shuffle(rng);
            rest.truncate(m);
            return Ok(rest);
        }
        let mut seen = HashSet::with_capacity(m);
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            let s = sample_valid(&self.rule, rng)?;
            if !self.contains(&s) && seen.insert(s.clone()) {
                out.push(s);
            }
        }
        Ok(out)
    }

    /// Writes a JSON header line followed by one comma-separated row per
    /// sample.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            rule: self.rule.clone(),
            n: self.len(),
            seed: self.seed,
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for s in &self.samples {
            let row: Vec<String> = s.0.iter().map(i8::to_string).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let parse = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            msg,
        };
        let mut lines = BufReader::new(fs::File::open(path)?).lines();
        let first = lines.next().ok_or_else(|| parse("empty file".into()))??;
        let header: Header =
            serde_json::from_str(&first).map_err(|e| parse(format!("header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(parse(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let mut samples = Vec::with_capacity(header.n);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|t| t.trim().parse::<i8>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse(format!("row {}: {e}", i + 1)))?;
            samples.push(Sample(row));
        }
        if samples.len() != header.n {
            return Err(parse(format!(
                "header says n={} but found {} rows",
                header.n,
                samples.len()
            )));
        }
        Self::from_samples(header.rule, samples, header.seed)
    }
}

/// Encodes samples into a row-major matrix.
pub(crate) fn encode_rows(rule: &RuleSpec, samples: &[Sample]) -> Array2<f64> {
    let width = rule.encoded_dim();
    let mut m = Array2::zeros((samples.len(), width));
    for (mut row, s) in m.rows_mut().into_iter().zip(samples) {
        for (dst, v) in row.iter_mut().zip(encode(rule, s)) {
            *dst = v;
        }
    }
    m
}

/// Draws `n` distinct valid samples, deterministic in `seed`.
///
/// Rejection-samples from the rule; when `n` is more than half the support
/// and the support is enumerable, shuffles the enumeration instead. In both
/// branches the dataset for a smaller `n` is a prefix of the larger one.
pub fn generate_dataset(rule: &RuleSpec, n: usize, seed: u64) -> Result<Dataset> {
    let count = count_valid(rule)?;
    if n as u128 > count {
        return Err(Error::SupportExceeded {
            requested: n,
            available: count,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = if 2 * n as u128 > count && count <= DEFAULT_ENUM_CAP {
        let mut all = enumerate_valid(rule)?;
        all.shuffle(&mut rng);
        all.truncate(n);
        all
    } else {
        let mut seen = HashSet::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let s = sample_valid(rule, &mut rng)?;
            if seen.insert(s.clone()) {
                out.push(s);
            }
        }
        out
    };
    Dataset::from_samples(rule.clone(), samples, seed)
}
