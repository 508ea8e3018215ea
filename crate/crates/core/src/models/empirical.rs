use ndarray::Array2;

use crate::diffcore::Denoiser;
use crate::error::{Error, Result};

/// Below this noise level the posterior is replaced by its nearest-anchor
/// limit.
pub const NEAREST_SIGMA: f64 = 1e-6;

/// Exact posterior mean of the Gaussian-smoothed empirical distribution of a
/// fixed set of anchors.
#[derive(Clone, Debug)]
pub struct EmpiricalDenoiser {
    anchors: Array2<f64>,
}

impl EmpiricalDenoiser {
    pub fn new(anchors: Array2<f64>) -> Result<Self> {
        if anchors.nrows() == 0 || anchors.ncols() == 0 {
            return Err(Error::Shape("empirical denoiser needs at least one anchor".into()));
        }
        Ok(Self { anchors })
    }

    pub fn anchors(&self) -> &Array2<f64> {
        &self.anchors
    }
}

/// Posterior mean over candidate rows `cands` (row-major, width `x.len()`),
/// with max-subtracted log-weights.
pub(crate) fn softmax_mean(cands: &[f64], x: &[f64], sigma: f64, out: &mut [f64], logw: &mut Vec<f64>) {
    let w = x.len();
    logw.clear();
    logw.extend(cands.chunks_exact(w).map(|a| {
        let d2: f64 = a.iter().zip(x).map(|(a, x)| (a - x) * (a - x)).sum();
        -d2
    }));
    out.iter_mut().for_each(|o| *o = 0.0);
    if sigma < NEAREST_SIGMA {
        let best = logw
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, v)| if *v > b.1 { (i, *v) } else { b })
            .0;
        out.copy_from_slice(&cands[best * w..(best + 1) * w]);
        return;
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let max = logw.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mut z = 0.0;
    for (a, lw) in cands.chunks_exact(w).zip(logw.iter()) {
        let p = ((lw - max) * inv).exp();
        z += p;
        for (o, a) in out.iter_mut().zip(a) {
            *o += p * a;
        }
    }
    out.iter_mut().for_each(|o| *o /= z);
}

impl Denoiser for EmpiricalDenoiser {
    fn dim(&self) -> usize {
        self.anchors.ncols()
    }

    fn denoise(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        let cands = self.anchors.as_slice().expect("anchors are standard layout");
        let mut logw = Vec::with_capacity(self.anchors.nrows());
        softmax_mean(cands, x, sigma, out, &mut logw);
    }

    fn exact_score(&self) -> bool {
        true
    }
}
