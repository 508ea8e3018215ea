use super::{Encoding, RuleSpec, Sample};

/// Result of snapping a real vector back to discrete symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub sample: Sample,
    /// Some cell was farther than the snap tolerance from its symbol.
    pub ambiguous: bool,
    /// Largest per-cell distance to the chosen symbol (`inf` if non-finite).
    pub max_distance: f64,
}

/// Default snap tolerance: 0.1 for binary families, 0.15 for categorical.
pub fn snap_epsilon(rule: &RuleSpec) -> f64 {
    if rule.is_binary() {
        0.1
    } else {
        0.15
    }
}

/// Real value of symbol index `i` under scalar encoding.
fn scalar_level(rule: &RuleSpec, i: usize) -> f64 {
    if rule.is_binary() {
        if i == 0 {
            -1.0
        } else {
            1.0
        }
    } else {
        let n = rule.alphabet_size();
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

fn symbol_index(rule: &RuleSpec, sym: i8) -> usize {
    if rule.is_binary() {
        usize::from(sym > 0)
    } else {
        sym as usize
    }
}

/// Maps a discrete sample to its real-valued encoding.
///
/// Scalar maps the alphabet affinely onto `[-1, 1]`; one-hot emits an
/// indicator of width `n` per cell, optionally shifted by `-1/n`.
pub fn encode(rule: &RuleSpec, s: &Sample) -> Vec<f64> {
    let mut out = Vec::with_capacity(rule.encoded_dim());
    let n = rule.alphabet_size();
    match rule.encoding() {
        Encoding::Scalar => out.extend(s.0.iter().map(|v| scalar_level(rule, symbol_index(rule, *v)))),
        enc => {
            let shift = if enc == Encoding::OneHotZeroMean {
                1.0 / n as f64
            } else {
                0.0
            };
            for v in &s.0 {
                let hot = symbol_index(rule, *v);
                out.extend((0..n).map(|j| f64::from(u8::from(j == hot)) - shift));
            }
        }
    }
    out
}

/// Snaps `v` to the nearest symbols using [`snap_epsilon`].
pub fn decode(rule: &RuleSpec, v: &[f64]) -> Decoded {
    decode_with_eps(rule, v, snap_epsilon(rule))
}

pub fn decode_with_eps(rule: &RuleSpec, v: &[f64], eps: f64) -> Decoded {
    let alphabet = rule.alphabet();
    let n = alphabet.len();
    let mut symbols = Vec::with_capacity(rule.dim());
    let mut max_distance = 0.0f64;
    match rule.encoding() {
        Encoding::Scalar => {
            for &x in v {
                if !x.is_finite() {
                    symbols.push(alphabet[0]);
                    max_distance = f64::INFINITY;
                    continue;
                }
                let (best, dist) = if rule.is_binary() {
                    // ties at zero go to +1
                    let i = usize::from(x >= 0.0);
                    (i, (x.abs() - 1.0).abs())
                } else {
                    (0..n)
                        .map(|i| (i, (x - scalar_level(rule, i)).abs()))
                        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
                };
                symbols.push(alphabet[best]);
                max_distance = max_distance.max(dist);
            }
        }
        enc => {
            let shift = if enc == Encoding::OneHotZeroMean {
                1.0 / n as f64
            } else {
                0.0
            };
            for cell in v.chunks(n) {
                if cell.iter().any(|x| !x.is_finite()) {
                    symbols.push(alphabet[0]);
                    max_distance = f64::INFINITY;
                    continue;
                }
                let hot = cell
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |a, (i, x)| if *x > a.1 { (i, *x) } else { a })
                    .0;
                let dist = cell
                    .iter()
                    .enumerate()
                    .map(|(j, x)| (x + shift - f64::from(u8::from(j == hot))).abs())
                    .fold(0.0, f64::max);
                symbols.push(alphabet[hot]);
                max_distance = max_distance.max(dist);
            }
        }
    }
    Decoded {
        sample: Sample(symbols),
        ambiguous: max_distance > eps,
        max_distance,
    }
}
