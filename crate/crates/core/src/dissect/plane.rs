use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffcore::Denoiser;
use crate::error::{Error, Result};
use crate::rulekit::{encode, verify_unchecked, Encoding, RuleSpec, Sample};

pub const PLANE_GRID: usize = 50;
pub const PLANE_RANGE: (f64, f64) = (-1.75, 3.75);

/// A 2D slice through the cube face spanned by bits 0 and 1 of `x_a`.
///
/// `x_b` flips both bits (valid, at `(2√2, 0)`), `x_c` flips bit 0 and
/// `x_d` flips bit 1 (both invalid, at `(√2, ±√2)`). Coordinates are taken in
/// the orthonormal basis `(u1, u2)` obtained by Gram-Schmidt on
/// `(x_b − x_a, x_c − x_a)`, so display and basis coordinates coincide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlaneSpec {
    pub rule: String,
    pub anchor_a: Sample,
    pub anchor_b: Sample,
    pub anchor_c: Sample,
    pub anchor_d: Sample,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    /// In-plane coordinates of `a, b, c, d`.
    pub anchor_coords: [[f64; 2]; 4],
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

fn flip(s: &Sample, bits: &[usize]) -> Sample {
    let mut v = s.0.clone();
    for &b in bits {
        v[b] = -v[b];
    }
    Sample(v)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    v[n - 1] = hi;
    v
}

pub fn build_plane(x_a: &Sample, rule: &RuleSpec) -> Result<PlaneSpec> {
    build_plane_with_grid(x_a, rule, PLANE_GRID, PLANE_RANGE)
}

pub fn build_plane_with_grid(x_a: &Sample, rule: &RuleSpec, n: usize, range: (f64, f64)) -> Result<PlaneSpec> {
    if !rule.is_binary() || rule.encoding() != Encoding::Scalar {
        return Err(Error::Unsupported("plane slices need a binary rule in scalar encoding".into()));
    }
    if rule.dim() < 2 || x_a.len() != rule.dim() {
        return Err(Error::Shape("anchor length does not match the rule".into()));
    }
    if n < 2 {
        return Err(Error::config("grid", "need at least two points per axis"));
    }
    if !verify_unchecked(rule, x_a).sample_valid {
        return Err(Error::config("anchor", "x_a must satisfy the rule"));
    }
    if !rule.groups().iter().any(|g| g.contains(&0) && g.contains(&1)) {
        return Err(Error::config("anchor", "bits 0 and 1 must share a group"));
    }
    let b = flip(x_a, &[0, 1]);
    let c = flip(x_a, &[0]);
    let d = flip(x_a, &[1]);
    let ea = encode(rule, x_a);
    let diff = |s: &Sample| -> Vec<f64> { encode(rule, s).iter().zip(&ea).map(|(p, q)| p - q).collect() };
    let vab = diff(&b);
    let vac = diff(&c);
    let nab = dot(&vab, &vab).sqrt();
    let u1: Vec<f64> = vab.iter().map(|v| v / nab).collect();
    let proj = dot(&vac, &u1);
    let w: Vec<f64> = vac.iter().zip(&u1).map(|(v, u)| v - proj * u).collect();
    let nw = dot(&w, &w).sqrt();
    let u2: Vec<f64> = w.iter().map(|v| v / nw).collect();
    let coords = |s: &Sample| {
        let v = diff(s);
        [dot(&v, &u1), dot(&v, &u2)]
    };
    let anchor_coords = [[0.0, 0.0], coords(&b), coords(&c), coords(&d)];
    Ok(PlaneSpec {
        rule: rule.to_string(),
        anchor_a: x_a.clone(),
        anchor_b: b,
        anchor_c: c,
        anchor_d: d,
        u1,
        u2,
        anchor_coords,
        alphas: linspace(range.0, range.1, n),
        betas: linspace(range.0, range.1, n),
    })
}

impl PlaneSpec {
    /// `x_a + α·u1 + β·u2` in encoded space.
    pub fn embed(&self, alpha: f64, beta: f64) -> Vec<f64> {
        self.anchor_a
            .values()
            .iter()
            .zip(self.u1.iter().zip(&self.u2))
            .map(|(&a, (u, v))| f64::from(a) + alpha * u + beta * v)
            .collect()
    }

    /// All grid points, row-major with β as the row index.
    pub fn grid_points(&self) -> Array2<f64> {
        let d = self.u1.len();
        let mut pts = Array2::zeros((self.betas.len() * self.alphas.len(), d));
        for (bi, &beta) in self.betas.iter().enumerate() {
            for (ai, &alpha) in self.alphas.iter().enumerate() {
                let r = bi * self.alphas.len() + ai;
                for (k, v) in self.embed(alpha, beta).into_iter().enumerate() {
                    pts[(r, k)] = v;
                }
            }
        }
        pts
    }
}

/// Denoiser field over a plane; grids are indexed `[β, α]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSlice {
    pub sigma: f64,
    /// `‖(D(x, σ) − x) / σ²‖₂`.
    pub score_norm: Array2<f64>,
    /// `D(x, σ) · u1`.
    pub projection: Array2<f64>,
}

pub fn field_slice<D: Denoiser + ?Sized>(denoiser: &D, plane: &PlaneSpec, sigma: f64) -> Result<FieldSlice> {
    if !(sigma > 0.0) {
        return Err(Error::NonPositiveSigma(sigma));
    }
    if denoiser.dim() != plane.u1.len() {
        return Err(Error::Shape("denoiser and plane dimensions differ".into()));
    }
    let pts = plane.grid_points();
    let mut den = Array2::zeros(pts.raw_dim());
    denoiser.denoise_batch(pts.view(), sigma, den.view_mut());
    let shape = (plane.betas.len(), plane.alphas.len());
    let s2 = sigma * sigma;
    let norms: Vec<f64> = den
        .axis_iter(Axis(0))
        .zip(pts.axis_iter(Axis(0)))
        .map(|(d, x)| d.iter().zip(x).map(|(a, b)| ((a - b) / s2).powi(2)).sum::<f64>().sqrt())
        .collect();
    let projs: Vec<f64> = den.axis_iter(Axis(0)).map(|d| dot(d.as_slice().unwrap_or(&d.to_vec()), &plane.u1)).collect();
    Ok(FieldSlice {
        sigma,
        score_norm: Array2::from_shape_vec(shape, norms).expect("grid shape"),
        projection: Array2::from_shape_vec(shape, projs).expect("grid shape"),
    })
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct FieldSidecar<'a> {
    plane: &'a PlaneSpec,
    sigma: f64,
    step: Option<u64>,
    layout: &'static str,
    files: [&'a str; 2],
}

impl FieldSlice {
    /// Writes `<stem>_score.csv`, `<stem>_proj.csv` (one grid row per line,
    /// rows are β, columns α) and a `<stem>.json` sidecar.
    pub fn write(&self, dir: &Path, stem: &str, plane: &PlaneSpec, step: Option<u64>) -> Result<Vec<std::path::PathBuf>> {
        fs::create_dir_all(dir)?;
        let grid_csv = |g: &Array2<f64>| {
            let mut s = String::new();
            for row in g.rows() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                writeln!(s, "{}", cells.join(",")).unwrap();
            }
            s
        };
        let score = format!("{stem}_score.csv");
        let proj = format!("{stem}_proj.csv");
        fs::write(dir.join(&score), grid_csv(&self.score_norm))?;
        fs::write(dir.join(&proj), grid_csv(&self.projection))?;
        let side = FieldSidecar {
            plane,
            sigma: self.sigma,
            step,
            layout: "row-major, rows index betas, columns index alphas",
            files: [&score, &proj],
        };
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, serde_json::to_vec_pretty(&side)?)?;
        Ok(vec![dir.join(score), dir.join(proj), json])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::FnDenoiser;

    fn anchor() -> Sample {
        Sample(vec![1, -1, -1, 1, 1, 1])
    }

    #[test]
    fn anchors_land_on_expected_coordinates() {
        let rule = RuleSpec::parity(6, 3).unwrap();
        let p = build_plane(&anchor(), &rule).unwrap();
        let r2 = 2f64.sqrt();
        let want = [[0.0, 0.0], [2.0 * r2, 0.0], [r2, r2], [r2, -r2]];
        for (got, w) in p.anchor_coords.iter().zip(want) {
            assert!((got[0] - w[0]).abs() < 1e-12 && (got[1] - w[1]).abs() < 1e-12, "{got:?}");
        }
        assert!(dot(&p.u1, &p.u2).abs() < 1e-12);
        assert!((dot(&p.u2, &p.u2) - 1.0).abs() < 1e-12);
        let e = p.embed(want[2][0], want[2][1]);
        assert!(e.iter().zip(&p.anchor_c.0).all(|(a, &b)| (a - f64::from(b)).abs() < 1e-12));
        assert_eq!(p.alphas.len(), 50);
        assert_eq!((p.alphas[0], p.alphas[49]), PLANE_RANGE);
    }

    #[test]
    fn rejects_bad_anchors() {
        let rule = RuleSpec::parity(6, 3).unwrap();
        assert!(build_plane(&Sample(vec![-1, 1, 1, 1, 1, 1]), &rule).is_err());
        let split = RuleSpec::parity(6, 1).unwrap();
        assert!(build_plane(&Sample(vec![1; 6]), &split).is_err());
    }

    #[test]
    fn identity_denoiser_has_zero_score() {
        let rule = RuleSpec::parity(6, 3).unwrap();
        let p = build_plane_with_grid(&anchor(), &rule, 7, PLANE_RANGE).unwrap();
        let ident = FnDenoiser::new(6, |x: &[f64], _s, o: &mut [f64]| o.copy_from_slice(x));
        let f = field_slice(&ident, &p, 0.3).unwrap();
        assert!(f.score_norm.iter().all(|&v| v == 0.0));
        assert_eq!(f.projection.dim(), (7, 7));
        let dir = tempfile::tempdir().unwrap();
        let files = f.write(dir.path(), "field", &p, Some(10)).unwrap();
        assert!(files.iter().all(|f| f.exists()));
    }
}
