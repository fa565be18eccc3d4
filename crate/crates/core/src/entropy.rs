//! Cross-entropy loss, softmax entropy and two toy models relating the
//! dimension of a logit manifold to the expected entropy. All values are in
//! nats.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Coord, LogitRecord};

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const MC_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EntropyError {
    #[error("record has no tokens")]
    Empty,
    #[error("every logit is masked")]
    AllMasked,
    #[error("logit {0} is NaN or +inf")]
    NonFinite(usize),
    #[error("n_samples must be positive")]
    NoSamples,
    #[error("active dimension must be positive")]
    ZeroDim,
}

/// Entropy of `softmax(z)`:
/// `ln sum e^z - (sum z e^z) / (sum e^z)`, evaluated after shifting by
/// `max z`. Entries equal to `-inf` are masked and carry no weight.
pub fn softmax_entropy<T: Coord>(z: &[T]) -> Result<f64, EntropyError> {
    let mut max = f64::NEG_INFINITY;
    let mut active = 0usize;
    for (i, v) in z.iter().enumerate() {
        let v = v.to_f64();
        if v.is_nan() || v == f64::INFINITY {
            return Err(EntropyError::NonFinite(i));
        }
        if v > f64::NEG_INFINITY {
            active += 1;
            max = max.max(v);
        }
    }
    if active == 0 {
        return Err(EntropyError::AllMasked);
    }
    let (mut sum, mut weighted) = (0.0f64, 0.0f64);
    for v in z.iter().map(|v| v.to_f64()).filter(|v| *v > f64::NEG_INFINITY) {
        let shifted = v - max;
        let w = shifted.exp();
        sum += w;
        weighted += shifted * w;
    }
    let s = sum.ln() - weighted / sum;
    Ok(s.clamp(0.0, (active as f64).ln()))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `-(1/N) sum ln p(x_i | x_<i)`.
pub fn avg_cross_entropy(rec: &LogitRecord) -> Result<f64, EntropyError> {
    if rec.n_tokens() == 0 {
        return Err(EntropyError::Empty);
    }
    let ll: Vec<f64> = rec.true_next_loglik().iter().map(|&v| v as f64).collect();
    Ok(-mean(&ll))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub avg_cross_entropy: f64,
    /// Mean of `per_token_softmax_entropy`.
    pub avg_contextual_entropy: f64,
    pub per_token_softmax_entropy: Vec<f64>,
}

pub fn contextual_entropy_report(rec: &LogitRecord) -> Result<EntropyReport, EntropyError> {
    if rec.n_tokens() == 0 {
        return Err(EntropyError::Empty);
    }
    let per_token = (0..rec.n_tokens())
        .into_par_iter()
        .map(|i| softmax_entropy(rec.logits_row(i)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EntropyReport {
        avg_cross_entropy: avg_cross_entropy(rec)?,
        avg_contextual_entropy: mean(&per_token),
        per_token_softmax_entropy: per_token,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyModel {
    UnitBox,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyResult {
    pub model: ToyModel,
    pub d_m: usize,
    pub expected_entropy: f64,
    /// `ln d_m` for the unit box, `H_{d_m} - 1` for the Dirichlet simplex.
    pub reference: f64,
    pub n_samples: usize,
    pub std_error: f64,
}

/// Running mean and sum of squared deviations, merged in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * other.n / n,
            m2: self.m2 + other.m2 + delta * delta * self.n * other.n / n,
        }
    }

    fn std_error(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

/// Mean of `sample(rng)` over `n_samples` draws. Chunk `c` draws from
/// ChaCha20 stream `c`, so the result does not depend on thread count.
fn monte_carlo<F>(n_samples: usize, seed: u64, sample: F) -> Moments
where
    F: Fn(&mut ChaCha20Rng, &mut Vec<f64>) -> f64 + Sync,
{
    let n_chunks = n_samples.div_ceil(MC_CHUNK);
    let parts: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map_init(Vec::new, |buf, c| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            let mut m = Moments::default();
            for _ in 0..count {
                m.push(sample(&mut rng, buf));
            }
            m
        })
        .collect();
    parts.into_iter().fold(Moments::default(), Moments::merge)
}

/// Expected softmax entropy of `d_m` logits drawn i.i.d. from `U(0, 1)`.
pub fn unit_box_expected_entropy(d_m: usize, n_samples: usize, seed: u64) -> Result<ToyResult, EntropyError> {
    if d_m == 0 {
        return Err(EntropyError::ZeroDim);
    }
    if n_samples == 0 {
        return Err(EntropyError::NoSamples);
    }
    let m = monte_carlo(n_samples, seed, |rng, z| {
        z.clear();
        z.extend((0..d_m).map(|_| rng.random::<f64>()));
        softmax_entropy(z).expect("finite logits")
    });
    Ok(ToyResult {
        model: ToyModel::UnitBox,
        d_m,
        expected_entropy: m.mean,
        reference: (d_m as f64).ln(),
        n_samples,
        std_error: m.std_error(),
    })
}

/// `H_{d_m} - 1`, the expected entropy of a uniform draw from the
/// `d_m`-simplex (`psi(d_m + 1) - psi(2)`). Summed smallest term first.
pub fn dirichlet_expected_entropy(d_m: usize) -> f64 {
    (1..=d_m).rev().map(|k| 1.0 / k as f64).sum::<f64>() - 1.0
}

/// `dirichlet_expected_entropy(d)` for every `d` in `1..=max_d` (index `d - 1`),
/// accumulated with compensated summation.
pub fn dirichlet_expected_entropy_table(max_d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_d);
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for k in 1..=max_d {
        let y = 1.0 / k as f64 - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
        out.push(sum - 1.0);
    }
    out
}

/// Monte Carlo entropy of `p ~ Dirichlet(1, ..., 1)`, sampled as normalized
/// standard exponentials.
pub fn dirichlet_mc_entropy(d_m: usize, n_samples: usize, seed: u64) -> Result<ToyResult, EntropyError> {
    if d_m == 0 {
        return Err(EntropyError::ZeroDim);
    }
    if n_samples == 0 {
        return Err(EntropyError::NoSamples);
    }
    let m = monte_carlo(n_samples, seed, |rng, e| {
        e.clear();
        e.extend((0..d_m).map(|_| rng.sample::<f64, _>(Exp1)));
        let total: f64 = e.iter().sum();
        let h: f64 = e
            .iter()
            .map(|&x| x / total)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum();
        h.max(0.0)
    });
    Ok(ToyResult {
        model: ToyModel::Dirichlet,
        d_m,
        expected_entropy: m.mean,
        reference: dirichlet_expected_entropy(d_m),
        n_samples,
        std_error: m.std_error(),
    })
}

pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}
