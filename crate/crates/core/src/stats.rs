//! Pearson and Spearman correlation with p-values, and their layerwise
//! application across a population of prompts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::entropy::EntropyReport;
use crate::pipeline::GeometryProfile;

/// Significance level used to flag layer correlations.
pub const SIGNIFICANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("inputs have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 pairs, got {0}")]
    TooFew(usize),
    #[error("a variable has zero variance; correlation undefined")]
    ZeroVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// Two-sided p-value of the t-test against zero correlation.
    pub p: f64,
    pub n: usize,
}

/// CDF of Student's t with `df` degrees of freedom, through the regularized
/// incomplete beta function `I_x(df/2, 1/2)` with `x = df / (df + t^2)`.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * beta_reg(0.5 * df, 0.5, df / (df + t * t));
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(0.5 * df, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

fn check(x: &[f64], y: &[f64]) -> Result<usize, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew(x.len()));
    }
    Ok(x.len())
}

fn pearson_rho(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn p_from_rho(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let denom = 1.0 - rho * rho;
    if denom <= 0.0 {
        return 0.0;
    }
    t_two_sided_p(rho * (df / denom).sqrt(), df)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    let n = check(x, y)?;
    let rho = pearson_rho(x, y)?;
    Ok(Correlation {
        rho,
        p: p_from_rho(rho, n),
        n,
    })
}

/// Ranks starting at 1; tied values share the average of their ranks.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    let n = check(x, y)?;
    let rho = pearson_rho(&mid_ranks(x), &mid_ranks(y))?;
    Ok(Correlation {
        rho,
        p: p_from_rho(rho, n),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pearson,
    Spearman,
}

fn coefficient(method: Method, x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    match method {
        Method::Pearson => pearson_rho(x, y),
        Method::Spearman => pearson_rho(&mid_ranks(x), &mid_ranks(y)),
    }
}

/// Two-sided permutation p-value: the share of `n_perm` random pairings of
/// `y` with `x` whose |coefficient| reaches the observed one, with the
/// observed pairing counted once.
pub fn permutation_p_value(x: &[f64], y: &[f64], method: Method, n_perm: usize, seed: u64) -> Result<f64, StatsError> {
    check(x, y)?;
    let observed = coefficient(method, x, y)?.abs();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut shuffled = y.to_vec();
    let mut hits = 0usize;
    for _ in 0..n_perm {
        for i in (1..shuffled.len()).rev() {
            let j = rng.random_range(0..=i);
            shuffled.swap(i, j);
        }
        if coefficient(method, x, &shuffled)?.abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (n_perm + 1) as f64)
}

/// Standard deviation of the Pearson coefficient over `n_resamples`
/// bootstrap resamples of the pairs. Resamples with zero variance are skipped.
pub fn bootstrap_pearson_std(x: &[f64], y: &[f64], n_resamples: usize, seed: u64) -> Result<f64, StatsError> {
    let n = check(x, y)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut bx, mut by) = (vec![0.0; n], vec![0.0; n]);
    let mut values = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        for slot in 0..n {
            let i = rng.random_range(0..n);
            bx[slot] = x[i];
            by[slot] = y[i];
        }
        if let Ok(r) = pearson_rho(&bx, &by) {
            values.push(r);
        }
    }
    if values.len() < 2 {
        return Err(StatsError::TooFew(values.len()));
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    Ok(var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCorrelation {
    pub layer: usize,
    pub n: usize,
    pub pearson: Option<f64>,
    pub p_pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub p_spearman: Option<f64>,
    pub p_permutation: Option<f64>,
    /// Bootstrap over prompts, not a replication of any published band.
    pub pearson_bootstrap_std: Option<f64>,
    pub significant: bool,
    /// Why the layer could not be computed.
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub x: String,
    pub y: String,
    pub per_layer: Vec<LayerCorrelation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOptions {
    /// Range scaling `n2` of the GRIDE estimate to correlate.
    pub scaling: usize,
    /// Correlate `ln(ID)` rather than raw ID.
    pub log_id: bool,
    /// Permutation p-values from this many shuffles.
    pub permutations: Option<usize>,
    /// Bootstrap resamples for the coefficient spread; 0 disables.
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        Self {
            scaling: 2,
            log_id: true,
            permutations: None,
            bootstrap: 1000,
            seed: 0,
        }
    }
}

/// Correlates `x[layer]` with `y` across samples, layer by layer. Samples
/// with a missing or non-finite `x` at a layer are left out of that layer.
pub fn layerwise_correlation(
    x_label: &str,
    y_label: &str,
    samples: &[(Vec<Option<f64>>, f64)],
    opts: &CorrelationOptions,
) -> CorrelationReport {
    let n_layers = samples.iter().map(|(xs, _)| xs.len()).max().unwrap_or(0);
    let per_layer = (0..n_layers)
        .map(|layer| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = samples
                .iter()
                .filter_map(|(xs, y)| {
                    let x = xs.get(layer).copied().flatten()?;
                    (x.is_finite() && y.is_finite()).then_some((x, *y))
                })
                .unzip();
            correlate_layer(layer, &xs, &ys, opts)
        })
        .collect();
    CorrelationReport {
        x: x_label.to_string(),
        y: y_label.to_string(),
        per_layer,
    }
}

fn correlate_layer(layer: usize, xs: &[f64], ys: &[f64], opts: &CorrelationOptions) -> LayerCorrelation {
    let mut out = LayerCorrelation {
        layer,
        n: xs.len(),
        pearson: None,
        p_pearson: None,
        spearman: None,
        p_spearman: None,
        p_permutation: None,
        pearson_bootstrap_std: None,
        significant: false,
        flag: None,
    };
    let layer_seed = opts.seed ^ (layer as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    match pearson(xs, ys) {
        Ok(c) => {
            out.pearson = Some(c.rho);
            out.p_pearson = Some(c.p);
            out.significant = c.p < SIGNIFICANCE;
        }
        Err(e) => {
            out.flag = Some(e.to_string());
            return out;
        }
    }
    if let Ok(c) = spearman(xs, ys) {
        out.spearman = Some(c.rho);
        out.p_spearman = Some(c.p);
    }
    if let Some(n_perm) = opts.permutations {
        out.p_permutation = permutation_p_value(xs, ys, Method::Pearson, n_perm, layer_seed).ok();
    }
    if opts.bootstrap > 0 {
        out.pearson_bootstrap_std = bootstrap_pearson_std(xs, ys, opts.bootstrap, layer_seed).ok();
    }
    out
}

/// Per layer, correlates the GRIDE ID (log by default) at `opts.scaling`
/// with each prompt's average cross-entropy loss.
pub fn layerwise_id_loss_correlation(
    population: &[(GeometryProfile, EntropyReport)],
    opts: &CorrelationOptions,
) -> CorrelationReport {
    let samples: Vec<(Vec<Option<f64>>, f64)> = population
        .iter()
        .map(|(profile, report)| {
            let xs = (0..profile.per_layer.len())
                .map(|l| {
                    profile
                        .id_at(l, opts.scaling)
                        .filter(|d| *d > 0.0)
                        .map(|d| if opts.log_id { d.ln() } else { d })
                })
                .collect();
            (xs, report.avg_cross_entropy)
        })
        .collect();
    let x = if opts.log_id {
        format!("log_id_s{}", opts.scaling)
    } else {
        format!("id_s{}", opts.scaling)
    };
    layerwise_correlation(&x, "avg_cross_entropy", &samples, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let c = pearson(&x, &y).unwrap();
        assert!((c.rho - 1.0).abs() < 1e-15);
        assert!(c.p < 1e-20);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().rho + 1.0).abs() < 1e-15);
        let c = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert!((c.rho - 3.0 / (2.0f64 * 14.0 / 3.0).sqrt()).abs() < 1e-12);
        assert!((c.rho - 0.98198).abs() < 1e-5);
    }

    #[test]
    fn pearson_p_value_against_reference() {
        // r = 0.98198, n = 3: t = r sqrt(1 / (1 - r^2)) = 5.196..., df = 1,
        // two-sided p = 1 - 2 atan(t) / pi.
        let c = pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        let t = c.rho / (1.0 - c.rho * c.rho).sqrt();
        let expected = 1.0 - 2.0 * t.atan() / std::f64::consts::PI;
        assert!((c.p - expected).abs() < 1e-10, "{} vs {expected}", c.p);
    }

    #[test]
    fn error_paths() {
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::TooFew(2)));
        assert_eq!(
            pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(StatsError::LengthMismatch(3, 2))
        );
        assert_eq!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::ZeroVariance)
        );
        assert_eq!(
            spearman(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::ZeroVariance)
        );
    }

    #[test]
    fn spearman_examples() {
        let x = [0.1, 0.5, 1.2, 2.0, 3.3];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert!((spearman(&x, &y).unwrap().rho - 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| -v.powi(3)).collect();
        assert!((spearman(&x, &y).unwrap().rho + 1.0).abs() < 1e-15);
        let c = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((c.rho - 0.8).abs() < 1e-12);
    }

    #[test]
    fn mid_ranks_average_ties() {
        assert_eq!(mid_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
        assert_eq!(mid_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn t_cdf_known_values() {
        // df = 1 is Cauchy.
        for t in [-3.0, -0.5, 0.0, 0.7, 2.0] {
            let cauchy = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert!((student_t_cdf(t, 1.0) - cauchy).abs() < 1e-12);
        }
        // df = 2 has a closed form.
        for t in [-1.5f64, 0.3, 4.0] {
            let exact = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
            assert!((student_t_cdf(t, 2.0) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_population_is_weakly_correlated() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let samples: Vec<(Vec<Option<f64>>, f64)> = (0..200)
            .map(|_| {
                let xs = (0..6).map(|_| Some(rng.sample::<f64, _>(StandardNormal))).collect();
                (xs, rng.sample(StandardNormal))
            })
            .collect();
        let rep = layerwise_correlation("x", "y", &samples, &CorrelationOptions::default());
        for l in &rep.per_layer {
            assert!(l.pearson.unwrap().abs() < 0.2);
            assert_eq!(l.n, 200);
            assert!(l.pearson_bootstrap_std.unwrap() > 0.0);
        }
    }

    #[test]
    fn too_few_pairs_flags_only_that_layer() {
        let samples = vec![
            (vec![Some(1.0), Some(1.0)], 1.0),
            (vec![Some(2.0), None], 2.5),
            (vec![Some(3.0), Some(0.5)], 2.7),
        ];
        let rep = layerwise_correlation("x", "y", &samples, &CorrelationOptions::default());
        assert!(rep.per_layer[0].pearson.is_some());
        assert_eq!(rep.per_layer[1].n, 2);
        assert!(rep.per_layer[1].pearson.is_none());
        assert!(rep.per_layer[1].flag.is_some());
    }

    #[test]
    fn permutation_p_tracks_t_test() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 0.3 * v + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let t = pearson(&x, &y).unwrap().p;
        let perm = permutation_p_value(&x, &y, Method::Pearson, 5000, 3).unwrap();
        assert!((t - perm).abs() < 0.03, "{t} vs {perm}");
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(
            x in proptest::collection::vec(-100.0f64..100.0, 5..40),
            noise in proptest::collection::vec(-100.0f64..100.0, 40),
            a in 0.01f64..50.0,
            b in -100.0f64..100.0,
        ) {
            let y: Vec<f64> = noise[..x.len()].to_vec();
            prop_assume!(pearson(&x, &y).is_ok());
            let r = pearson(&x, &y).unwrap().rho;
            let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let nx: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&ax, &y).unwrap().rho - r).abs() < 1e-12);
            prop_assert!((pearson(&nx, &y).unwrap().rho + r).abs() < 1e-12);
        }

        #[test]
        fn spearman_monotone_invariance(
            x in proptest::collection::vec(-5.0f64..5.0, 5..40),
            y in proptest::collection::vec(-5.0f64..5.0, 40),
        ) {
            let y = &y[..x.len()];
            prop_assume!(spearman(&x, y).is_ok());
            let r = spearman(&x, y).unwrap().rho;
            let tx: Vec<f64> = x.iter().map(|v| v.exp() + v.powi(3)).collect();
            prop_assert_eq!(spearman(&tx, y).unwrap().rho, r);
        }
    }
}
