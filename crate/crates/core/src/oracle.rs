//! Brute-force reference computations. Each one recomputes its value by a
//! route that shares no arithmetic with the code it checks.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::detnet::net::shadow::ShadowNet;
use crate::detnet::{Batch, Weights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    RationalForward,
    FiniteDiff,
    BinomialBounds,
    DetectionFormula,
    WrapExhaustive,
}

impl OracleKind {
    pub const ALL: [OracleKind; 5] = [
        OracleKind::RationalForward,
        OracleKind::FiniteDiff,
        OracleKind::BinomialBounds,
        OracleKind::DetectionFormula,
        OracleKind::WrapExhaustive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OracleKind::RationalForward => "rational_forward",
            OracleKind::FiniteDiff => "finite_diff",
            OracleKind::BinomialBounds => "binomial_bounds",
            OracleKind::DetectionFormula => "detection_formula",
            OracleKind::WrapExhaustive => "wrap_exhaustive",
        }
    }
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<OracleKind> {
        OracleKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::UnknownOracle(s.to_string()))
    }
}

type Exact = Ratio<i128>;

const GRID: i128 = 1 << 16;

fn exact(raw: i32) -> Exact {
    Exact::new(raw as i128, GRID)
}

/// Largest grid point not above `x`.
fn floor_to_grid(x: Exact) -> Exact {
    (x * Exact::from_integer(GRID)).floor() / Exact::from_integer(GRID)
}

/// Forward pass in exact rationals: each pre-activation is the exact dot
/// product plus bias, floored onto the grid once; hidden layers clamp to
/// `[0, 1]`. Returns raw grid values. Valid while no accumulator wraps.
pub fn rational_forward(weights: &Weights, input: &[i32]) -> Vec<i64> {
    let mut x: Vec<Exact> = input.iter().map(|&v| exact(v)).collect();
    let last = weights.layers.len() - 1;
    for (l, layer) in weights.layers.iter().enumerate() {
        let n_in = x.len();
        let z: Vec<Exact> = layer
            .biases
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let dot = (0..n_in).fold(exact(b.raw()), |acc, j| acc + exact(layer.weights[i * n_in + j].raw()) * x[j]);
                floor_to_grid(dot)
            })
            .collect();
        x = if l == last {
            z
        } else {
            z.into_iter().map(|v| v.max(Exact::from_integer(0)).min(Exact::from_integer(1))).collect()
        };
    }
    x.into_iter().map(|v| (v * Exact::from_integer(GRID)).to_integer() as i64).collect()
}

/// Central finite differences of the real-valued loss, one parameter at a
/// time, in [`Weights::params`] order.
pub fn finite_diff(weights: &Weights, batch: &Batch, h: f64) -> Vec<f64> {
    let base = ShadowNet::from_weights(weights);
    (0..base.params.len())
        .map(|k| {
            let mut plus = ShadowNet { architecture: base.architecture.clone(), params: base.params.clone() };
            let mut minus = ShadowNet { architecture: base.architecture.clone(), params: base.params.clone() };
            plus.params[k] += h;
            minus.params[k] -= h;
            (plus.loss(batch) - minus.loss(batch)) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||b||, floor)`.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialBounds {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Mean and `k`-sigma band of a Binomial(n, p) count.
pub fn binomial_bounds(p: f64, n: u64, k: f64) -> Result<BinomialBounds> {
    if !(0.0..=1.0).contains(&p) || n == 0 {
        return Err(Error::OutOfRange(format!("binomial p={p} n={n}")));
    }
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    Ok(BinomialBounds { mean, sd, lower: mean - k * sd, upper: mean + k * sd })
}

/// Probability that at least one of `m` independently sampled messages is
/// kept, summed term by term over the binomial distribution.
pub fn detection_formula(p: f64, m: u32) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange(format!("probability {p}")));
    }
    let mut total = 0.0;
    let mut choose = 1.0;
    for k in 1..=m {
        choose = choose * (m - k + 1) as f64 / k as f64;
        total += choose * p.powi(k as i32) * (1.0 - p).powi((m - k) as i32);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WrapReport {
    pub triples: u64,
    /// Triples where the two groupings differ under wrapping addition.
    pub wrap_violations: u64,
    /// Same under saturating addition.
    pub saturate_violations: u64,
    /// Triples where wrapping disagrees with the sum reduced mod 256.
    pub modular_mismatches: u64,
}

/// Every 8-bit triple, both groupings, both overflow modes.
pub fn wrap_exhaustive() -> WrapReport {
    use rayon::prelude::*;
    let (wrap, sat, modular) = (i8::MIN..=i8::MAX)
        .into_par_iter()
        .map(|a| {
            let mut counts = (0u64, 0u64, 0u64);
            for b in i8::MIN..=i8::MAX {
                for c in i8::MIN..=i8::MAX {
                    let wl = a.wrapping_add(b).wrapping_add(c);
                    let wr = a.wrapping_add(b.wrapping_add(c));
                    let sl = a.saturating_add(b).saturating_add(c);
                    let sr = a.saturating_add(b.saturating_add(c));
                    let reduced = (a as i32 + b as i32 + c as i32).rem_euclid(256);
                    let expect = if reduced > 127 { reduced - 256 } else { reduced };
                    counts.0 += (wl != wr) as u64;
                    counts.1 += (sl != sr) as u64;
                    counts.2 += (wl as i32 != expect) as u64;
                }
            }
            counts
        })
        .reduce(|| (0, 0, 0), |x, y| (x.0 + y.0, x.1 + y.1, x.2 + y.2));
    WrapReport { triples: 1 << 24, wrap_violations: wrap, saturate_violations: sat, modular_mismatches: modular }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detnet::data::{synthetic_dataset, TaskKind};
    use crate::detnet::net::forward_outputs;
    use crate::detnet::{backward_batch, init_weights, Fixed};
    use crate::model::Seed;

    #[test]
    fn kinds_parse() {
        for k in OracleKind::ALL {
            assert_eq!(k.name().parse::<OracleKind>().unwrap(), k);
        }
        assert!(matches!("monte_carlo".parse::<OracleKind>(), Err(Error::UnknownOracle(_))));
    }

    #[test]
    fn rational_forward_matches_engine() {
        for s in 0..20 {
            let w = init_weights(&[6, 5, 3], &Seed::from_u64(s)).unwrap();
            let data = synthetic_dataset(&Seed::from_u64(100 + s), &[6, 5, 3], 1, 4, TaskKind::Random);
            for item in 0..4 {
                let x = data.batches[0].input(item);
                let raw: Vec<i32> = x.iter().map(|v| v.raw()).collect();
                let engine: Vec<i64> = forward_outputs(&w, x).iter().map(|v| v.raw() as i64).collect();
                assert_eq!(rational_forward(&w, &raw), engine);
            }
        }
    }

    #[test]
    fn hand_computed_forward() {
        // 1x1 net, w = 1/2, b = -1/65536, x = 3/65536: z = 1.5/65536 - 1/65536 floors to 0.
        let mut w = Weights::zeros(&[1, 1]);
        w.layers[0].weights[0] = Fixed::from_ratio(1, 2);
        w.layers[0].biases[0] = Fixed(-1);
        assert_eq!(rational_forward(&w, &[3]), vec![0]);
        assert_eq!(rational_forward(&w, &[-3]), vec![-3]);
    }

    #[test]
    fn finite_differences_agree_with_backward() {
        let w = init_weights(&[5, 4, 2], &Seed::from_u64(2)).unwrap();
        let data = synthetic_dataset(&Seed::from_u64(3), &[5, 4, 2], 1, 4, TaskKind::Random);
        let fd = finite_diff(&w, &data.batches[0], 1e-6);
        let engine: Vec<f64> = backward_batch(&w, &data.batches[0]).unwrap().params().map(|p| p.to_f64()).collect();
        assert!(relative_error(&engine, &fd, 1e-9) < 1e-3);
    }

    #[test]
    fn detection_formula_values() {
        assert_eq!(detection_formula(0.5, 10).unwrap(), 0.9990234375);
        assert!((detection_formula(0.1, 50).unwrap() - (1.0 - 0.9f64.powi(50))).abs() < 1e-12);
        assert_eq!(detection_formula(0.0, 5).unwrap(), 0.0);
        assert!(detection_formula(1.5, 5).is_err());
    }

    #[test]
    fn binomial_band() {
        let b = binomial_bounds(0.5, 100, 3.0).unwrap();
        assert_eq!((b.mean, b.sd, b.lower, b.upper), (50.0, 5.0, 35.0, 65.0));
        assert!(binomial_bounds(0.5, 0, 3.0).is_err());
    }
}
