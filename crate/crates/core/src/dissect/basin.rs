use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Denoiser;
use crate::error::{Error, Result};
use crate::rulekit::{encode, Dataset, Encoding, Sample};

pub const BASIN_POINTS: usize = 150;
pub const BASIN_RANGE: (f64, f64) = (-0.5, 2.0);
pub const BASIN_SIGMA: f64 = 0.5;
pub const BASIN_ANCHORS: usize = 30;
pub const BOOTSTRAP_RESAMPLES: usize = 2000;
pub const CI_PERCENTILES: (f64, f64) = (5.0, 95.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Direction {
    /// Toward the anchor with bit 0 flipped.
    Hamming1Invalid,
    /// Toward the first same-group two-bit flip absent from training.
    Hamming2ValidNovel,
    /// Toward the nearest other training sample.
    NearestOtherTrain,
}

impl Direction {
    pub const ALL: [Direction; 3] = [
        Direction::Hamming1Invalid,
        Direction::Hamming2ValidNovel,
        Direction::NearestOtherTrain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Direction::Hamming1Invalid => "hamming1Invalid",
            Direction::Hamming2ValidNovel => "hamming2ValidNovel",
            Direction::NearestOtherTrain => "nearestOtherTrain",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Direction::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::config("direction", format!("unknown direction {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Band {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BasinProfile {
    pub direction: Direction,
    pub sigma: f64,
    pub t: Vec<f64>,
    /// Dataset indices of the anchors that were evaluated.
    pub anchors: Vec<usize>,
    pub skipped: usize,
    pub exact_match: Band,
    pub hamming: Band,
    pub l2_from_start: Band,
    pub bootstrap_seed: u64,
    pub resamples: usize,
}

#[derive(Clone, Debug)]
pub struct BasinConfig {
    pub t: Vec<f64>,
    pub sigma: f64,
    pub resamples: usize,
    pub bootstrap_seed: u64,
}

impl Default for BasinConfig {
    fn default() -> Self {
        let (lo, hi) = BASIN_RANGE;
        let n = BASIN_POINTS;
        let mut t: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        t[n - 1] = hi;
        Self {
            t,
            sigma: BASIN_SIGMA,
            resamples: BOOTSTRAP_RESAMPLES,
            bootstrap_seed: 0,
        }
    }
}

/// Endpoint of the probe line from `dataset.samples()[idx]`, or `None` when
/// the direction cannot be resolved for that anchor.
pub fn direction_endpoint(dataset: &Dataset, idx: usize, dir: Direction) -> Option<Sample> {
    let x = &dataset.samples()[idx];
    let flip = |bits: &[usize]| {
        let mut v = x.0.clone();
        for &b in bits {
            v[b] = -v[b];
        }
        Sample(v)
    };
    match dir {
        Direction::Hamming1Invalid => Some(flip(&[0])),
        Direction::Hamming2ValidNovel => {
            for g in dataset.rule().groups() {
                for i in g.clone() {
                    for j in i + 1..g.end {
                        let s = flip(&[i, j]);
                        if !dataset.contains(&s) {
                            return Some(s);
                        }
                    }
                }
            }
            None
        }
        Direction::NearestOtherTrain => dataset
            .samples()
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != idx)
            .min_by_key(|(j, s)| (x.hamming(s), *j))
            .map(|(_, s)| s.clone()),
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Column means of `values` (anchors × t) with percentile bootstrap bands
/// over anchors.
pub fn bootstrap_band(values: &Array2<f64>, resamples: usize, seed: u64, pct: (f64, f64)) -> Band {
    let (n, m) = values.dim();
    let mean = values.mean_axis(Axis(0)).map(|a| a.to_vec()).unwrap_or_else(|| vec![f64::NAN; m]);
    if n == 0 || resamples == 0 {
        return Band {
            lo: mean.clone(),
            hi: mean.clone(),
            mean,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boots = Array2::<f64>::zeros((resamples, m));
    for mut row in boots.rows_mut() {
        for _ in 0..n {
            let k = rng.random_range(0..n);
            row += &values.row(k);
        }
        row /= n as f64;
    }
    let (mut lo, mut hi) = (Vec::with_capacity(m), Vec::with_capacity(m));
    for col in boots.columns() {
        let mut c = col.to_vec();
        c.sort_by(f64::total_cmp);
        lo.push(percentile(&c, pct.0));
        hi.push(percentile(&c, pct.1));
    }
    Band { mean, lo, hi }
}

/// Probes the denoiser along `x(t) = x_a + t·(x_e − x_a)` for each anchor.
pub fn basin_profile<D: Denoiser + ?Sized>(
    denoiser: &D,
    dataset: &Dataset,
    anchors: &[usize],
    dir: Direction,
    cfg: &BasinConfig,
) -> Result<BasinProfile> {
    let rule = dataset.rule();
    if !rule.is_binary() || rule.encoding() != Encoding::Scalar {
        return Err(Error::Unsupported("basin profiles need a binary rule in scalar encoding".into()));
    }
    if !(cfg.sigma > 0.0) {
        return Err(Error::NonPositiveSigma(cfg.sigma));
    }
    if let Some(&bad) = anchors.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::config("anchors", format!("index {bad} outside the dataset")));
    }
    let d = rule.dim();
    let nt = cfg.t.len();
    let mut used = Vec::new();
    let mut rows: Vec<[Vec<f64>; 3]> = Vec::new();
    for &idx in anchors {
        let Some(end) = direction_endpoint(dataset, idx, dir) else {
            continue;
        };
        let xa = encode(rule, &dataset.samples()[idx]);
        let xe = encode(rule, &end);
        let mut pts = Array2::zeros((nt, d));
        for (r, &t) in cfg.t.iter().enumerate() {
            for k in 0..d {
                pts[(r, k)] = xa[k] + t * (xe[k] - xa[k]);
            }
        }
        let mut den = Array2::zeros((nt, d));
        denoiser.denoise_batch(pts.view(), cfg.sigma, den.view_mut());
        let mut em = Vec::with_capacity(nt);
        let mut hm = Vec::with_capacity(nt);
        let mut l2 = Vec::with_capacity(nt);
        for row in den.rows() {
            let flips = row
                .iter()
                .zip(&xa)
                .filter(|(v, a)| (if **v >= 0.0 { 1.0 } else { -1.0 }) != **a || !v.is_finite())
                .count();
            em.push(if flips == 0 { 1.0 } else { 0.0 });
            hm.push(flips as f64);
            l2.push(row.iter().zip(&xa).map(|(v, a)| (v - a).powi(2)).sum::<f64>().sqrt());
        }
        used.push(idx);
        rows.push([em, hm, l2]);
    }
    let stack = |k: usize| {
        let mut a = Array2::zeros((rows.len(), nt));
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r[k].iter().enumerate() {
                a[(i, j)] = *v;
            }
        }
        a
    };
    let band = |k: usize| bootstrap_band(&stack(k), cfg.resamples, cfg.bootstrap_seed.wrapping_add(k as u64), CI_PERCENTILES);
    Ok(BasinProfile {
        direction: dir,
        sigma: cfg.sigma,
        t: cfg.t.clone(),
        skipped: anchors.len() - used.len(),
        anchors: used,
        exact_match: band(0),
        hamming: band(1),
        l2_from_start: band(2),
        bootstrap_seed: cfg.bootstrap_seed,
        resamples: cfg.resamples,
    })
}

impl BasinProfile {
    /// Long-format rows `direction,t,metric,mean,lo,hi`.
    pub fn csv_rows(&self, out: &mut String) {
        for (name, b) in [
            ("exactMatch", &self.exact_match),
            ("hamming", &self.hamming),
            ("l2FromStart", &self.l2_from_start),
        ] {
            for (i, t) in self.t.iter().enumerate() {
                writeln!(out, "{},{t:?},{name},{:?},{:?},{:?}", self.direction.name(), b.mean[i], b.lo[i], b.hi[i]).unwrap();
            }
        }
    }
}

pub fn write_basin_csv(path: &Path, profiles: &[BasinProfile]) -> Result<()> {
    let mut s = String::from("direction,t,metric,mean,lo,hi\n");
    for p in profiles {
        p.csv_rows(&mut s);
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::EmpiricalDenoiser;
    use crate::rulekit::RuleSpec;

    fn toy() -> Dataset {
        let rule = RuleSpec::parity(6, 2).unwrap();
        let s = vec![Sample(vec![1, 1, 1, 1, 1, 1]), Sample(vec![1, 1, -1, -1, 1, 1]), Sample(vec![-1, -1, -1, -1, -1, -1])];
        Dataset::from_samples(rule, s, 0).unwrap()
    }

    #[test]
    fn endpoints() {
        let ds = toy();
        assert_eq!(direction_endpoint(&ds, 0, Direction::Hamming1Invalid).unwrap().0, vec![-1, 1, 1, 1, 1, 1]);
        assert_eq!(direction_endpoint(&ds, 0, Direction::Hamming2ValidNovel).unwrap().0, vec![-1, -1, 1, 1, 1, 1]);
        assert_eq!(direction_endpoint(&ds, 0, Direction::NearestOtherTrain).unwrap(), ds.samples()[1]);
        assert_eq!("nearestOtherTrain".parse::<Direction>().unwrap(), Direction::NearestOtherTrain);
    }

    #[test]
    fn empirical_starts_matched_and_ends_unmatched() {
        let ds = toy();
        let den = EmpiricalDenoiser::new(ds.encoded()).unwrap();
        let cfg = BasinConfig {
            resamples: 200,
            ..BasinConfig::default()
        };
        let p = basin_profile(&den, &ds, &[0, 1, 2], Direction::NearestOtherTrain, &cfg).unwrap();
        let at = |t: f64| (0..p.t.len()).min_by(|&i, &j| (p.t[i] - t).abs().total_cmp(&(p.t[j] - t).abs())).unwrap();
        assert_eq!(p.exact_match.mean[at(0.0)], 1.0);
        assert_eq!(p.exact_match.mean[at(2.0)], 0.0);
        assert_eq!(p.skipped, 0);
        for i in 0..p.t.len() {
            assert!(p.exact_match.lo[i] <= p.exact_match.mean[i] + 1e-12);
            assert!(p.exact_match.mean[i] <= p.exact_match.hi[i] + 1e-12);
        }
    }

    #[test]
    fn bootstrap_narrows_with_more_anchors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let make = |n: usize, rng: &mut ChaCha8Rng| Array2::from_shape_fn((n, 4), |(_, j)| if rng.random::<f64>() < 0.2 * j as f64 { 1.0 } else { 0.0 });
        let small = bootstrap_band(&make(30, &mut rng), 2000, 1, CI_PERCENTILES);
        let big = bootstrap_band(&make(120, &mut rng), 2000, 1, CI_PERCENTILES);
        for j in 1..4 {
            assert!(big.hi[j] - big.lo[j] < small.hi[j] - small.lo[j]);
            assert!(small.lo[j] <= small.mean[j] && small.mean[j] <= small.hi[j]);
        }
    }
}
