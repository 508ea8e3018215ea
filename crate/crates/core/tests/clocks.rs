use std::path::Path;

use approx::assert_relative_eq;
use lab_core::clocks::{detect_onset, fit_power_law, innovation_window, OnsetCriterion};
use lab_core::expcli::read_points;
use proptest::prelude::*;

fn series(vals: &[f64]) -> Vec<(u64, f64)> {
    vals.iter().enumerate().map(|(i, &v)| (10 * (i as u64 + 1), v)).collect()
}

fn criterion(thr: f64, ema: bool) -> OnsetCriterion {
    let mut c = OnsetCriterion::exceeds("m", thr);
    c.use_ema = ema;
    c
}

proptest! {
    #[test]
    fn raising_the_threshold_never_moves_onset_earlier(
        vals in prop::collection::vec(0.0f64..1.0, 1..60),
        lo in 0.0f64..1.0,
        bump in 0.0f64..0.5,
        ema in any::<bool>(),
    ) {
        let s = series(&vals);
        let a = detect_onset(&s, &criterion(lo, ema));
        let b = detect_onset(&s, &criterion(lo + bump, ema));
        if let Some(tb) = b {
            prop_assert!(a.is_some_and(|ta| ta <= tb));
        }
    }

    #[test]
    fn appending_after_onset_keeps_it(
        vals in prop::collection::vec(0.0f64..1.0, 1..60),
        tail in prop::collection::vec(0.0f64..1.0, 0..30),
        thr in 0.0f64..1.0,
        ema in any::<bool>(),
    ) {
        let c = criterion(thr, ema);
        let s = series(&vals);
        if let Some(t) = detect_onset(&s, &c) {
            let mut all = vals.clone();
            all.extend(&tail);
            prop_assert_eq!(detect_onset(&series(&all), &c), Some(t));
        }
    }

    #[test]
    fn power_law_fit_is_scale_covariant(
        pts in prop::collection::vec((1.0f64..1e4, 1.0f64..1e6), 3..20),
        k in 0.01f64..100.0,
    ) {
        prop_assume!(pts.iter().any(|p| (p.0 - pts[0].0).abs() > 1e-3));
        let f = fit_power_law(&pts).unwrap();
        let scaled: Vec<(f64, f64)> = pts.iter().map(|&(n, t)| (k * n, t)).collect();
        let g = fit_power_law(&scaled).unwrap();
        prop_assert!((g.alpha - f.alpha).abs() < 1e-9);
        prop_assert!((g.r2 - f.r2).abs() < 1e-9);
        prop_assert!(((g.c - f.c * k.powf(-f.alpha)) / f.c).abs() < 1e-9 * (1.0 + k.powf(-f.alpha)));
    }

    #[test]
    fn window_is_never_inverted(
        acc in prop::collection::vec(0.0f64..1.0, 1..40),
        mem in prop::collection::vec(0.0f64..1.0, 1..40),
    ) {
        let r = innovation_window(&series(&acc), &series(&mem), &OnsetCriterion::rule_default(), &OnsetCriterion::mem(0.3));
        if let (Some(a), Some(b)) = (r.tau_rule, r.tau_mem) {
            prop_assert!(a < b);
        }
        if r.window.is_some() {
            prop_assert!(r.tau_rule.unwrap() < r.tau_mem.unwrap());
        }
    }
}

#[test]
fn exact_power_laws_are_recovered() {
    for (c, a) in [(35.0, 1.14), (2.1, 0.97)] {
        let pts: Vec<(f64, f64)> = [32.0f64, 64.0, 128.0, 256.0, 512.0].iter().map(|&n| (n, c * n.powf(a))).collect();
        let f = fit_power_law(&pts).unwrap();
        assert_relative_eq!(f.c, c, max_relative = 1e-9);
        assert_relative_eq!(f.alpha, a, epsilon = 1e-9);
        assert_relative_eq!(f.r2, 1.0, epsilon = 1e-12);
    }
}

// Values frozen from an independent log-log least-squares fit (numpy lstsq,
// cross-checked with scipy linregress) of the same CSV files.
#[test]
fn digitized_fixtures_match_frozen_fits() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let cases = [
        ("tau_mem_diffusion.csv", 35.29999930849512, 1.140000002614056, 0.9399999995129308),
        ("tau_mem_autoregressive.csv", 2.1000010384907983, 0.9699999384238559, 0.9399999421236657),
    ];
    for (file, c, alpha, r2) in cases {
        let pts = read_points(&dir.join(file)).unwrap();
        assert_eq!(pts.len(), 34);
        let f = fit_power_law(&pts).unwrap();
        assert!((f.c - c).abs() < 1e-6, "{file}: c {}", f.c);
        assert!((f.alpha - alpha).abs() < 1e-6, "{file}: alpha {}", f.alpha);
        assert!((f.r2 - r2).abs() < 1e-6, "{file}: r2 {}", f.r2);
        assert_eq!(f.n_points, 34);
    }
}
