//! Linear statistics of sampled configurations and their Monte Carlo
//! moments, with law-of-large-numbers and normality checks.

use faer::{c64, Mat};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dpp::{PointSample, SpectralReport};
use crate::quadrature::pairwise_sum;
use crate::testfn::TestFunction;

/// Asymptotic Kolmogorov–Smirnov critical constants.
pub const KS_CRITICAL_1PCT: f64 = 1.63;
pub const KS_CRITICAL_5PCT: f64 = 1.36;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("predicted variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("sampler failed at seed {seed}: {message}")]
    Sampler { seed: u64, message: String },
    #[error("sample at seed {seed} has {got} points, expected {expected}")]
    Rigidity { seed: u64, got: usize, expected: usize },
}

/// `Σ_i f(x_i)`.
pub fn linear_statistic(f: &TestFunction, sample: &PointSample) -> f64 {
    let values: Vec<f64> = sample.points().take(sample.len()).map(|x| f.value(x)).collect();
    pairwise_sum(&values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatRun {
    pub values: Vec<f64>,
    /// Points per sample.
    pub counts: Vec<usize>,
    pub base_seed: u64,
    pub mean: f64,
    /// Unbiased.
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl StatRun {
    pub fn from_values(values: Vec<f64>, counts: Vec<usize>, base_seed: u64) -> Result<Self, StatsError> {
        let n = values.len();
        if n < 2 {
            return Err(StatsError::TooFewSamples { needed: 2, got: n });
        }
        let nf = n as f64;
        let mean = pairwise_sum(&values) / nf;
        let central = |k: i32| pairwise_sum(&values.iter().map(|v| (v - mean).powi(k)).collect::<Vec<_>>()) / nf;
        let m2 = central(2);
        let m3 = central(3);
        let m4 = central(4);
        let variance = m2 * nf / (nf - 1.0);
        // Var(s²) ≈ (μ₄ − σ⁴ (n−3)/(n−1)) / n
        let var_of_var = ((m4 - variance * variance * (nf - 3.0) / (nf - 1.0)) / nf).max(0.0);
        let (skewness, excess_kurtosis) = if m2 > 0.0 {
            (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
        } else {
            (0.0, 0.0)
        };
        Ok(Self {
            values,
            counts,
            base_seed,
            mean,
            variance,
            se_mean: (variance / nf).sqrt(),
            se_variance: var_of_var.sqrt(),
            skewness,
            excess_kurtosis,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values.len()
    }

    /// Unbiased variance of the point counts, `Var(𝒩[1])`.
    pub fn count_variance(&self) -> f64 {
        let n = self.counts.len() as f64;
        if self.counts.len() < 2 {
            return 0.0;
        }
        let c: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        let mean = pairwise_sum(&c) / n;
        pairwise_sum(&c.iter().map(|v| (v - mean) * (v - mean)).collect::<Vec<_>>()) / (n - 1.0)
    }
}

/// Draws `n_samples` configurations with seeds `base_seed + i` in parallel
/// and evaluates `f` on each. The reduction order is fixed by sample index.
pub fn mc_moments<S, E>(sampler: S, f: &TestFunction, n_samples: usize, base_seed: u64) -> Result<StatRun, StatsError>
where
    S: Fn(u64) -> Result<PointSample, E> + Sync,
    E: std::fmt::Display,
{
    let draws: Vec<Result<(f64, usize), StatsError>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            let s = sampler(seed).map_err(|e| StatsError::Sampler {
                seed,
                message: e.to_string(),
            })?;
            Ok((linear_statistic(f, &s), s.len()))
        })
        .collect();
    let mut values = Vec::with_capacity(n_samples);
    let mut counts = Vec::with_capacity(n_samples);
    for d in draws {
        let (v, c) = d?;
        values.push(v);
        counts.push(c);
    }
    StatRun::from_values(values, counts, base_seed)
}

/// Like `mc_moments`, but every sample must have exactly `rank` points.
pub fn mc_moments_rigid<S, E>(
    sampler: S,
    f: &TestFunction,
    n_samples: usize,
    base_seed: u64,
    rank: usize,
) -> Result<StatRun, StatsError>
where
    S: Fn(u64) -> Result<PointSample, E> + Sync,
    E: std::fmt::Display,
{
    let run = mc_moments(sampler, f, n_samples, base_seed)?;
    if let Some((i, &c)) = run.counts.iter().enumerate().find(|(_, &c)| c != rank) {
        return Err(StatsError::Rigidity {
            seed: base_seed.wrapping_add(i as u64),
            got: c,
            expected: rank,
        });
    }
    Ok(run)
}

/// Exact mean and variance of `Σ f(x_i)` under the discrete DPP:
/// `Σ K_ii f_i` and `Σ K_ii f_i² − tr(K F K F)`.
pub fn discrete_moments(report: &SpectralReport, f_values: &[f64]) -> (f64, f64) {
    let u = &report.vectors;
    let m = u.nrows();
    let r = u.ncols();
    let lam = &report.eigenvalues;
    let mut diag = vec![0.0; m];
    for j in 0..r {
        for (i, d) in diag.iter_mut().enumerate() {
            *d += lam[j] * u[(i, j)].norm_sqr();
        }
    }
    let mean = pairwise_sum(&diag.iter().zip(f_values).map(|(k, f)| k * f).collect::<Vec<_>>());
    let second = pairwise_sum(&diag.iter().zip(f_values).map(|(k, f)| k * f * f).collect::<Vec<_>>());
    // A = U* F U; tr(KFKF) = Σ_{ab} λ_a λ_b |A_ab|²
    let fu = Mat::<c64>::from_fn(m, r, |i, j| u[(i, j)] * f_values[i]);
    let a = u.adjoint() * &fu;
    let mut cross = Vec::with_capacity(r * r);
    for x in 0..r {
        for y in 0..r {
            cross.push(lam[x] * lam[y] * a[(x, y)].norm_sqr());
        }
    }
    (mean, second - pairwise_sum(&cross))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlnReport {
    pub n_points: f64,
    /// `mean(𝒩[f]) / N`.
    pub ratio: f64,
    /// `(1/Vol_B) ∫ f Ω_B`.
    pub limit: f64,
    pub se: f64,
    pub z: f64,
    /// `√ mean((𝒩[f]/N − limit)²)`, the distance from the limit in probability.
    pub rms_deviation: f64,
    /// Empirical `Var(𝒩[f]) ≤ sup f² · N` (projection ensembles).
    pub variance_bound_ok: bool,
    /// Tail fractions beyond `k` standard deviations stay within `1/k²`
    /// (plus sampling slack) for `k = 2, 3`.
    pub chebyshev_ok: bool,
}

impl LlnReport {
    pub fn within(&self, k: f64) -> bool {
        self.z.abs() < k
    }
}

pub fn lln_check(run: &StatRun, n_points: f64, limit: f64, sup_f_sq: f64) -> LlnReport {
    let ratio = run.mean / n_points;
    let se = run.se_mean / n_points;
    let z = if se > 0.0 { (ratio - limit) / se } else { 0.0 };
    let dev: Vec<f64> = run.values.iter().map(|v| (v / n_points - limit).powi(2)).collect();
    let rms = (pairwise_sum(&dev) / dev.len() as f64).sqrt();
    let n = run.n_samples() as f64;
    let sd = run.variance.sqrt();
    let chebyshev_ok = [2.0f64, 3.0].iter().all(|&k| {
        let frac = run.values.iter().filter(|v| (*v - run.mean).abs() > k * sd).count() as f64 / n;
        let bound = 1.0 / (k * k);
        frac <= bound + 4.0 * (bound * (1.0 - bound) / n).sqrt()
    });
    LlnReport {
        n_points,
        ratio,
        limit,
        se,
        z,
        rms_deviation: rms,
        variance_bound_ok: run.variance <= sup_f_sq * n_points + 4.0 * run.se_variance,
        chebyshev_ok,
    }
}

/// True if `values` is non-increasing except for at most `allowed` rises.
pub fn decreasing_with_inversions(values: &[f64], allowed: usize) -> bool {
    values.windows(2).filter(|w| w[1] > w[0]).count() <= allowed
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltReport {
    pub n: usize,
    pub ks: f64,
    pub critical_1pct: f64,
    pub critical_5pct: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Empirical over predicted variance.
    pub variance_ratio: f64,
}

impl CltReport {
    pub fn passes_1pct(&self) -> bool {
        self.ks < self.critical_1pct
    }
}

/// Kolmogorov–Smirnov distance from the standard normal.
pub fn ks_standard_normal(values: &[f64]) -> f64 {
    let normal = Normal::standard();
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = normal.cdf(x);
            ((i as f64 + 1.0) / n - c).max(c - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Standardises by the empirical mean and the predicted standard deviation.
pub fn clt_check(run: &StatRun, predicted_variance: f64) -> Result<CltReport, StatsError> {
    if !(predicted_variance > 0.0) {
        return Err(StatsError::NonPositiveVariance(predicted_variance));
    }
    let n = run.n_samples();
    if n < 1000 {
        return Err(StatsError::TooFewSamples { needed: 1000, got: n });
    }
    let sd = predicted_variance.sqrt();
    let z: Vec<f64> = run.values.iter().map(|v| (v - run.mean) / sd).collect();
    let root = (n as f64).sqrt();
    Ok(CltReport {
        n,
        ks: ks_standard_normal(&z),
        critical_1pct: KS_CRITICAL_1PCT / root,
        critical_5pct: KS_CRITICAL_5PCT / root,
        skewness: run.skewness,
        excess_kurtosis: run.excess_kurtosis,
        variance_ratio: run.variance / predicted_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpp::{sample_general_dpp, validate_kernel, DiscretizedKernel, GroundSet, ProjectionBasis};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::Arc;

    fn normal_values(n: usize, seed: u64, sd: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * sd
            })
            .collect()
    }

    #[test]
    fn linear_statistic_examples() {
        let one = TestFunction::constant(2, 1.0);
        let s = PointSample {
            indices: vec![0, 1, 2],
            coords: vec![0.1, 0.2, 0.5, 0.5, 0.9, 0.0],
            dim: 2,
            seed: 0,
        };
        assert_eq!(linear_statistic(&one, &s), 3.0);
        let empty = PointSample {
            indices: vec![],
            coords: vec![],
            dim: 2,
            seed: 0,
        };
        assert_eq!(linear_statistic(&one, &empty), 0.0);
        // steep bump ≈ indicator of its support
        let bump = TestFunction::tensor_bump(2, 1.0, 0.3, vec![0.1, 0.2]);
        assert_relative_eq!(linear_statistic(&bump, &s), 1.0, epsilon = 1e-12);
    }

    fn line(m: usize) -> GroundSet {
        GroundSet::from_points((0..m).map(|i| i as f64).collect(), 1).unwrap()
    }

    #[test]
    fn deterministic_sampler_has_zero_variance() {
        let mut u = Mat::<c64>::zeros(3, 1);
        u[(1, 0)] = c64::new(1.0, 0.0);
        let basis = ProjectionBasis::from_columns(&u, Arc::new(line(3))).unwrap();
        let f = TestFunction::from_closures("id", 1, None, None, |x| x[0] + 0.5, |_, g| g[0] = 1.0);
        let run = mc_moments(|s| crate::dpp::sample_projection_dpp(&basis, s), &f, 200, 0).unwrap();
        assert_eq!(run.variance, 0.0);
        assert_eq!(run.mean, 1.5);
        assert_eq!(run.count_variance(), 0.0);
    }

    #[test]
    fn bernoulli_moments() {
        let q = [0.3, 0.7, 0.5];
        let m = q.len();
        let k = Mat::<c64>::from_fn(m, m, |i, j| c64::new(if i == j { q[i] } else { 0.0 }, 0.0));
        let dk = DiscretizedKernel::from_matrix(line(m), vec![1.0; m], k).unwrap();
        let report = validate_kernel(&dk).unwrap();
        let f = TestFunction::from_closures("w", 1, None, None, |x| 1.0 + x[0], |_, g| g[0] = 1.0);
        let run = mc_moments(|s| sample_general_dpp(&report, s), &f, 20_000, 100).unwrap();
        let w = [1.0, 2.0, 3.0];
        let mean: f64 = q.iter().zip(&w).map(|(q, w)| q * w).sum();
        let var: f64 = q.iter().zip(&w).map(|(q, w)| q * (1.0 - q) * w * w).sum();
        assert!((run.mean - mean).abs() < 4.0 * run.se_mean);
        assert!((run.variance - var).abs() < 4.0 * run.se_variance);
        let (dm, dv) = discrete_moments(&report, &w);
        assert_relative_eq!(dm, mean, max_relative = 1e-12);
        assert_relative_eq!(dv, var, max_relative = 1e-12);
    }

    #[test]
    fn seeds_are_deterministic() {
        let q = [0.4, 0.6];
        let k = Mat::<c64>::from_fn(2, 2, |i, j| c64::new(if i == j { q[i] } else { 0.0 }, 0.0));
        let dk = DiscretizedKernel::from_matrix(line(2), vec![1.0; 2], k).unwrap();
        let report = validate_kernel(&dk).unwrap();
        let f = TestFunction::constant(1, 1.0);
        let a = mc_moments(|s| sample_general_dpp(&report, s), &f, 500, 42).unwrap();
        let b = mc_moments(|s| sample_general_dpp(&report, s), &f, 500, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn variance_interval_coverage() {
        let mut hits = 0;
        for rep in 0..200 {
            let run = StatRun::from_values(normal_values(500, rep, 2.0), vec![], 0).unwrap();
            if (run.variance - 4.0).abs() <= 2.0 * run.se_variance {
                hits += 1;
            }
        }
        // nominal 95%; binomial sd over 200 draws is about 1.5%
        assert!((176..=200).contains(&hits), "coverage {hits}/200");
    }

    #[test]
    fn ks_on_normal_input() {
        let mut passes = 0;
        for rep in 0..100 {
            let run = StatRun::from_values(normal_values(2000, 1000 + rep, 1.5), vec![], 0).unwrap();
            let r = clt_check(&run, 2.25).unwrap();
            if r.passes_1pct() {
                passes += 1;
            }
            assert!((r.variance_ratio - 1.0).abs() < 0.15);
        }
        assert!(passes >= 95, "{passes}/100");
    }

    #[test]
    fn clt_errors() {
        let run = StatRun::from_values(normal_values(1200, 1, 1.0), vec![], 0).unwrap();
        assert!(matches!(clt_check(&run, 0.0), Err(StatsError::NonPositiveVariance(_))));
        let short = StatRun::from_values(normal_values(10, 1, 1.0), vec![], 0).unwrap();
        assert!(matches!(clt_check(&short, 1.0), Err(StatsError::TooFewSamples { .. })));
        assert!(matches!(
            StatRun::from_values(vec![1.0], vec![], 0),
            Err(StatsError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn lln_constant_function() {
        let run = StatRun::from_values(vec![2.5 * 7.0; 10], vec![7; 10], 0).unwrap();
        let r = lln_check(&run, 7.0, 2.5, 6.25);
        assert_eq!(r.ratio, 2.5);
        assert_eq!(r.z, 0.0);
        assert_eq!(r.rms_deviation, 0.0);
        assert!(r.variance_bound_ok && r.chebyshev_ok);
    }

    #[test]
    fn inversion_counting() {
        assert!(decreasing_with_inversions(&[3.0, 2.0, 1.0], 0));
        assert!(decreasing_with_inversions(&[3.0, 4.0, 1.0], 1));
        assert!(!decreasing_with_inversions(&[1.0, 2.0, 3.0], 1));
    }
}
