use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::StateLabel;

pub type Counts = [[u64; 4]; 4];

/// `counts[i][j]`: samples in state `i` at step `t` and state `j` at `t + 1`,
/// states indexed by [`StateLabel::index`].
pub fn transition_counts(from: &[StateLabel], to: &[StateLabel]) -> Result<Counts> {
    if from.len() != to.len() {
        return Err(Error::Shape(format!(
            "label lists differ in length: {} vs {}",
            from.len(),
            to.len()
        )));
    }
    let mut c = [[0u64; 4]; 4];
    for (a, b) in from.iter().zip(to) {
        c[a.index()][b.index()] += 1;
    }
    Ok(c)
}

/// Checkpoint × seed label matrix with the steps it was taken at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateRaster {
    pub steps: Vec<u64>,
    pub labels: Vec<Vec<StateLabel>>,
}

impl StateRaster {
    pub fn new() -> Self {
        Self {
            steps: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, step: u64, labels: Vec<StateLabel>) -> Result<()> {
        if let Some(first) = self.labels.first() {
            if first.len() != labels.len() {
                return Err(Error::Shape("raster rows must share the seed count".into()));
            }
        }
        if self.steps.last().is_some_and(|&s| s >= step) {
            return Err(Error::Shape("raster steps must be ascending".into()));
        }
        self.steps.push(step);
        self.labels.push(labels);
        Ok(())
    }

    pub fn seeds(&self) -> usize {
        self.labels.first().map_or(0, Vec::len)
    }

    /// One row per checkpoint: `step,s0,s1,...` with integer state codes.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step");
        for i in 0..self.seeds() {
            write!(out, ",seed_{i}").unwrap();
        }
        out.push('\n');
        for (step, row) in self.steps.iter().zip(&self.labels) {
            write!(out, "{step}").unwrap();
            for l in row {
                write!(out, ",{}", l.index()).unwrap();
            }
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            msg,
        };
        let mut raster = Self::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            let mut cells = line.split(',');
            let step = cells
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("line {}: bad step", ln + 1)))?;
            let labels = cells
                .map(|c| {
                    c.parse::<usize>()
                        .ok()
                        .and_then(StateLabel::from_index)
                        .ok_or_else(|| bad(format!("line {}: bad state code {c:?}", ln + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            raster.push(step, labels).map_err(|e| bad(e.to_string()))?;
        }
        Ok(raster)
    }
}

impl Default for StateRaster {
    fn default() -> Self {
        Self::new()
    }
}

/// Transition counts between consecutive checkpoints; entry `i` is keyed by
/// its source step `steps[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionTensor {
    pub steps: Vec<u64>,
    pub counts: Vec<Counts>,
}

/// A named `[start, end]` step range; a transition belongs to it when its
/// source step does.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub name: String,
    pub start: u64,
    pub end: u64,
}

impl Window {
    pub fn new(name: &str, start: u64, end: u64) -> Self {
        Self {
            name: name.to_string(),
            start,
            end,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedTransitions {
    pub window: Window,
    pub counts: Counts,
    /// Row-normalized counts; `None` for rows with zero occupancy.
    pub probabilities: [Option<[f64; 4]>; 4],
}

impl TransitionTensor {
    pub fn from_raster(raster: &StateRaster) -> Result<Self> {
        let mut counts = Vec::with_capacity(raster.labels.len().saturating_sub(1));
        for w in raster.labels.windows(2) {
            counts.push(transition_counts(&w[0], &w[1])?);
        }
        let steps = raster.steps[..counts.len()].to_vec();
        Ok(Self { steps, counts })
    }

    pub fn aggregate(&self, window: &Window) -> Result<AggregatedTransitions> {
        let mut sum = [[0u64; 4]; 4];
        let mut any = false;
        for (step, c) in self.steps.iter().zip(&self.counts) {
            if (window.start..=window.end).contains(step) {
                any = true;
                for i in 0..4 {
                    for j in 0..4 {
                        sum[i][j] += c[i][j];
                    }
                }
            }
        }
        if !any {
            return Err(Error::config(
                "window",
                format!("window {:?} [{}, {}] holds no transitions", window.name, window.start, window.end),
            ));
        }
        let probabilities = std::array::from_fn(|i| {
            let total: u64 = sum[i].iter().sum();
            (total > 0).then(|| std::array::from_fn(|j| sum[i][j] as f64 / total as f64))
        });
        Ok(AggregatedTransitions {
            window: window.clone(),
            counts: sum,
            probabilities,
        })
    }
}
