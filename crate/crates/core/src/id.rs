//! Intrinsic-dimension estimators built on neighbor-distance ratios.
//!
//! For ranks `n1 < n2` the ratio `mu = r_{n2} / r_{n1}` of a locally uniform
//! `d`-dimensional sample has density
//!
//! ```text
//! f(mu; d) = d (mu^d - 1)^(n2 - n1 - 1) / (mu^((n2 - 1) d + 1) B(n2 - n1, n1)),   mu > 1
//! ```
//!
//! `gride` maximizes the joint log-likelihood of the observed ratios in `d`.
//! `twonn` is the closed form `(N - 1) / sum(ln mu)` at `(n1, n2) = (1, 2)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::neighbors::{mu_ratios, NeighborError, NeighborGraph, RatioSet};

/// Lower edge of the search domain for `d`.
pub const D_MIN: f64 = 1e-6;
/// Requested absolute precision of the maximizer; bisection continues to
/// machine precision.
pub const D_TOL: f64 = 1e-8;
const BRACKET_START: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdMethod {
    Twonn,
    Gride,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdEstimate {
    pub d_hat: f64,
    pub n1: usize,
    pub n2: usize,
    /// Ratios that entered the estimate, after dropping degenerate tokens and `mu = 1`.
    pub n_used: usize,
    pub method: IdMethod,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum IdError {
    #[error("twonn needs ratios at (1, 2), got ({n1}, {n2})")]
    WrongRanks { n1: usize, n2: usize },
    #[error("only {0} usable ratios, need at least 2")]
    TooFewRatios(usize),
    #[error("all ratios equal 1; the cloud is degenerate")]
    DegenerateCloud,
    #[error("no interior maximum in ({lo}, {hi}]; derivative at upper edge is {derivative_at_hi}")]
    NoInteriorMaximum { lo: f64, hi: f64, derivative_at_hi: f64 },
    #[error("max scaling {scaling} must be a power of two >= 2 and <= graph k = {k}")]
    BadScaling { scaling: usize, k: usize },
    #[error("neighbor error: {0}")]
    Neighbor(String),
}

impl From<NeighborError> for IdError {
    fn from(e: NeighborError) -> Self {
        IdError::Neighbor(e.to_string())
    }
}

/// `ln mu` for every ratio strictly above one.
fn usable_logs(ratios: &RatioSet) -> Result<Vec<f64>, IdError> {
    let logs: Vec<f64> = ratios.mu.iter().filter(|&&m| m > 1.0).map(|m| m.ln()).collect();
    if logs.is_empty() && !ratios.mu.is_empty() {
        return Err(IdError::DegenerateCloud);
    }
    if logs.len() < 2 {
        return Err(IdError::TooFewRatios(logs.len()));
    }
    Ok(logs)
}

pub fn twonn(ratios: &RatioSet) -> Result<IdEstimate, IdError> {
    if (ratios.n1, ratios.n2) != (1, 2) {
        return Err(IdError::WrongRanks {
            n1: ratios.n1,
            n2: ratios.n2,
        });
    }
    let logs = usable_logs(ratios)?;
    let n = logs.len();
    let sum: f64 = logs.iter().sum();
    Ok(IdEstimate {
        d_hat: (n - 1) as f64 / sum,
        n1: 1,
        n2: 2,
        n_used: n,
        method: IdMethod::Twonn,
    })
}

/// Log of the ratio density at `mu` for dimension `d`; `-inf` outside `mu > 1`.
pub fn gride_log_density(mu: f64, d: f64, n1: usize, n2: usize) -> f64 {
    if mu <= 1.0 || d <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let l = mu.ln();
    let gap = (n2 - n1 - 1) as f64;
    // ln(mu^d - 1) = d l + ln(1 - mu^-d)
    let ln_pow_minus_one = d * l + (-(-d * l).exp_m1()).ln();
    let body = if gap == 0.0 { 0.0 } else { gap * ln_pow_minus_one };
    d.ln() + body - (((n2 - 1) as f64) * d + 1.0) * l - ln_beta(n2 - n1, n1)
}

fn ln_beta(a: usize, b: usize) -> f64 {
    let (a, b) = (a as f64, b as f64);
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Joint log-likelihood of the usable ratios at dimension `d`.
pub fn gride_log_likelihood(ratios: &RatioSet, d: f64) -> f64 {
    ratios
        .mu
        .iter()
        .filter(|&&m| m > 1.0)
        .map(|&m| gride_log_density(m, d, ratios.n1, ratios.n2))
        .sum()
}

/// Derivative of the joint log-likelihood in `d`:
/// `N/d + (n2-n1-1) sum(l / (1 - mu^-d)) - (n2-1) sum(l)`, with `l = ln mu`.
/// Strictly decreasing in `d`.
fn score(logs: &[f64], sum_logs: f64, d: f64, n1: usize, n2: usize) -> f64 {
    let n = logs.len() as f64;
    let gap = (n2 - n1 - 1) as f64;
    let middle = if gap == 0.0 {
        0.0
    } else {
        gap * logs.iter().map(|&l| l / -(-d * l).exp_m1()).sum::<f64>()
    };
    n / d + middle - (n2 - 1) as f64 * sum_logs
}

/// Maximum-likelihood dimension over `(D_MIN, 2 * ambient_dim]`.
pub fn gride(ratios: &RatioSet) -> Result<IdEstimate, IdError> {
    let (n1, n2) = (ratios.n1, ratios.n2);
    let logs = usable_logs(ratios)?;
    let sum_logs: f64 = logs.iter().sum();
    let s = |d: f64| score(&logs, sum_logs, d, n1, n2);
    let upper = 2.0 * ratios.ambient_dim.max(1) as f64;

    // Bracket the sign change of the score by doubling.
    let (mut lo, mut hi) = if s(BRACKET_START) <= 0.0 {
        if s(D_MIN) <= 0.0 {
            return Err(IdError::NoInteriorMaximum {
                lo: D_MIN,
                hi: upper,
                derivative_at_hi: s(D_MIN),
            });
        }
        (D_MIN, BRACKET_START)
    } else {
        let mut lo = BRACKET_START;
        let mut hi = (2.0 * lo).min(upper);
        while s(hi) > 0.0 {
            if hi >= upper {
                return Err(IdError::NoInteriorMaximum {
                    lo: D_MIN,
                    hi: upper,
                    derivative_at_hi: s(hi),
                });
            }
            lo = hi;
            hi = (2.0 * hi).min(upper);
        }
        (lo, hi)
    };

    // Bisect until the bracket stops shrinking; well past D_TOL.
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if s(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    debug_assert!(hi - lo < D_TOL);
    Ok(IdEstimate {
        d_hat: 0.5 * (lo + hi),
        n1,
        n2,
        n_used: logs.len(),
        method: IdMethod::Gride,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleEntry {
    pub n1: usize,
    pub n2: usize,
    pub result: Result<IdEstimate, IdError>,
}

/// GRIDE estimates at `(n1, n2) = (s/2, s)` for a list of range scalings.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSweep {
    pub entries: Vec<ScaleEntry>,
}

impl ScaleSweep {
    pub fn at(&self, n2: usize) -> Option<&ScaleEntry> {
        self.entries.iter().find(|e| e.n2 == n2)
    }
}

/// Range scalings `2, 4, ..., max_scaling`.
pub fn power_of_two_scalings(max_scaling: usize) -> Vec<usize> {
    std::iter::successors(Some(2usize), |s| s.checked_mul(2))
        .take_while(|&s| s <= max_scaling)
        .collect()
}

pub fn scale_sweep(graph: &NeighborGraph, max_scaling: usize) -> Result<ScaleSweep, IdError> {
    if max_scaling < 2 || !max_scaling.is_power_of_two() || max_scaling > graph.k() {
        return Err(IdError::BadScaling {
            scaling: max_scaling,
            k: graph.k(),
        });
    }
    sweep_at(graph, &power_of_two_scalings(max_scaling))
}

/// GRIDE at each listed scaling. Per-scale failures are recorded, not raised.
pub fn sweep_at(graph: &NeighborGraph, scalings: &[usize]) -> Result<ScaleSweep, IdError> {
    for &s in scalings {
        if s < 2 || !s.is_power_of_two() || s > graph.k() {
            return Err(IdError::BadScaling {
                scaling: s,
                k: graph.k(),
            });
        }
    }
    let entries = scalings
        .iter()
        .map(|&s| {
            let (n1, n2) = (s / 2, s);
            let result = mu_ratios(graph, n1, n2).map_err(IdError::from).and_then(|r| gride(&r));
            ScaleEntry { n1, n2, result }
        })
        .collect();
    Ok(ScaleSweep { entries })
}
