//! The acceptance suite: ten end-to-end checks at fixed tolerances.
//!
//! Each check returns a [`CriterionOutcome`] instead of panicking, so the
//! CLI can print a full table even when some checks fail.

use std::f64::consts::PI;
use std::fmt;
use std::time::{Duration, Instant};

use faer::{c64, Mat};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dpp::{chain_rule_sequence_probability, BoxGrid, FlatEnsemble, GroundSet, ProjectionBasis};
use crate::kernel::{exact_variance_quadrature, predicted_variance, FlatKernel};
use crate::landau::{LevelSet, MagneticModel, MultiIndex, SpectralWindow};
use crate::laguerre::{alpha_m, laguerre, poly_full_alpha, poly_pure_alpha, weighted_product_integral, Moment};
use crate::quadrature::gauss_laguerre;
use crate::stats::{clt_check, decreasing_with_inversions, discrete_moments, lln_check, mc_moments, mc_moments_rigid};
use crate::testfn::TestFunction;
use crate::torus::{
    cluster_spectrum, count_states, decay_fit, eigensolve, projection_kernel, sample_torus_ensemble,
    torus_demailly_prediction, MagneticLattice, TorusConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionOutcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub metrics: Vec<(String, f64)>,
    pub notes: Vec<String>,
    pub elapsed: Duration,
}

impl CriterionOutcome {
    fn new(id: u8, title: &'static str) -> Self {
        Self {
            id,
            title,
            passed: true,
            metrics: Vec::new(),
            notes: Vec::new(),
            elapsed: Duration::ZERO,
        }
    }

    fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push((name.into(), value));
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.passed = false;
            self.notes.push(format!("failed: {}", what.into()));
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }

    pub fn metric_value(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

impl fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} [{:>2}] {} ({:.1} s)", self.id, self.title, self.elapsed.as_secs_f64())?;
        for (name, value) in &self.metrics {
            write!(f, "\n        {name} = {value:.6e}")?;
        }
        for n in &self.notes {
            write!(f, "\n        {n}")?;
        }
        Ok(())
    }
}

pub const TITLES: [&str; 10] = [
    "Laguerre integral identities",
    "closed forms of the variance coefficients",
    "chain-rule law equals the determinantal law",
    "flat-model one-point intensity",
    "variance asymptotics and polyanalytic ratio",
    "torus spectral clustering and state counts",
    "kernel decay rate scaling",
    "law of large numbers on the torus",
    "central limit theorem for a flat window",
    "projection rigidity",
];

type Check = fn(&mut CriterionOutcome, u64) -> Result<(), String>;

const CHECKS: [Check; 10] = [
    laguerre_identities,
    closed_forms,
    law_equivalence,
    flat_intensity,
    variance_asymptotics,
    torus_clustering,
    decay_scaling,
    torus_lln,
    flat_clt,
    rigidity,
];

/// Runs criterion `id` (1-based) with the given base seed.
pub fn run_criterion(id: u8, seed: u64) -> CriterionOutcome {
    assert!((1..=10).contains(&id), "criteria are numbered 1 to 10");
    let idx = (id - 1) as usize;
    let mut out = CriterionOutcome::new(id, TITLES[idx]);
    let start = Instant::now();
    if let Err(e) = CHECKS[idx](&mut out, seed) {
        out.passed = false;
        out.notes.push(format!("error: {e}"));
    }
    out.elapsed = start.elapsed();
    out
}

pub const DEFAULT_SEED: u64 = 20_240_601;

pub fn run_all(seed: u64) -> Vec<CriterionOutcome> {
    (1..=10).map(|id| run_criterion(id, seed)).collect()
}

fn err<E: fmt::Display>(e: E) -> String {
    e.to_string()
}

fn laguerre_identities(out: &mut CriterionOutcome, _seed: u64) -> Result<(), String> {
    let (x, w) = gauss_laguerre(64).map_err(err)?;
    let mut worst: f64 = 0.0;
    for k in 0..=12 {
        for l in 0..=12 {
            for (moment, power) in [(Moment::Zero, 0), (Moment::One, 1)] {
                let quad: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(&y, &wy)| wy * laguerre(k, y) * laguerre(l, y) * y.powi(power))
                    .sum();
                let exact = weighted_product_integral(k, l, moment) as f64;
                worst = worst.max((quad - exact).abs());
            }
        }
    }
    out.metric("max_abs_error", worst);
    out.require(worst < 1e-10, format!("max error {worst:e} ≥ 1e-10"));
    Ok(())
}

fn closed_forms(out: &mut CriterionOutcome, _seed: u64) -> Result<(), String> {
    let mut cases = 0;
    for n in 1..=4 {
        let model = MagneticModel::isotropic(n, 1.0).map_err(err)?;
        for big_n in 0..=6 {
            let pure = model
                .validate_window(&SpectralWindow::pure_polyanalytic(big_n, n))
                .map_err(err)?;
            let full = model
                .validate_window(&SpectralWindow::full_polyanalytic(big_n, n))
                .map_err(err)?;
            let want_pure = poly_pure_alpha(big_n, n);
            let want_full = poly_full_alpha(big_n, n);
            for m in 0..n {
                let a = alpha_m(&pure, m).map_err(err)?;
                let b = alpha_m(&full, m).map_err(err)?;
                out.require(
                    Ratio::from_integer(a) == want_pure,
                    format!("pure n={n} N={big_n} m={}: {a} vs {want_pure}", m + 1),
                );
                out.require(b == want_full, format!("full n={n} N={big_n} m={}: {b} vs {want_full}", m + 1));
                cases += 2;
            }
        }
    }
    out.metric("cases", cases as f64);
    Ok(())
}

fn random_frame(m: usize, k: usize, rng: &mut ChaCha8Rng) -> Mat<c64> {
    let a = Mat::<c64>::from_fn(m, k, |_, _| c64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    a.qr().compute_thin_Q()
}

fn law_equivalence(out: &mut CriterionOutcome, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut configurations = 0usize;
    for m in 1..=12usize {
        for k in 1..=3usize.min(m) {
            for _ in 0..3 {
                let u = random_frame(m, k, &mut rng);
                let ground = GroundSet::from_points((0..m).map(|i| i as f64).collect(), 1).map_err(err)?;
                let basis = ProjectionBasis::from_columns(&u, ground.into()).map_err(err)?;
                let fact: f64 = (1..=k).map(|t| t as f64).product();
                let mut total = 0.0;
                for_each_tuple(m, k, &mut |seq| {
                    let p = chain_rule_sequence_probability(&basis, seq);
                    let km = Mat::<c64>::from_fn(k, k, |i, j| basis.kernel_entry(seq[i], seq[j]));
                    let want = km.determinant().re / fact;
                    worst = worst.max((p - want).abs());
                    total += p;
                    configurations += 1;
                });
                worst = worst.max((total - 1.0).abs());
            }
        }
    }
    out.metric("ordered_configurations", configurations as f64);
    out.metric("max_abs_error", worst);
    out.require(worst < 1e-10, format!("max error {worst:e} ≥ 1e-10"));
    Ok(())
}

fn for_each_tuple(m: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(m: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in 0..m {
            if !cur.contains(&i) {
                cur.push(i);
                rec(m, k, cur, f);
                cur.pop();
            }
        }
    }
    rec(m, k, &mut Vec::with_capacity(k), f);
}

fn ginibre() -> (MagneticModel, LevelSet) {
    let m = MagneticModel::isotropic(1, 1.0).expect("valid model");
    let l = LevelSet::from_indices(&m, [MultiIndex::zero(1)]).expect("valid level");
    (m, l)
}

fn flat_intensity(out: &mut CriterionOutcome, seed: u64) -> Result<(), String> {
    let (model, levels) = ginibre();
    let kernel = FlatKernel::new(&model, &levels);
    let radius = 8.0;
    let grid = BoxGrid::centered(2, radius, 0.25);
    let ens = FlatEnsemble::new(&kernel, 1, &grid).map_err(err)?;
    let one = TestFunction::constant(2, 1.0);
    let run = mc_moments(|s| ens.sample(s), &one, 10_000, seed).map_err(err)?;
    let area = (2.0 * radius) * (2.0 * radius);
    let intensity = run.mean / area;
    let se = run.se_mean / area;
    let target = 1.0 / (2.0 * PI);
    let z = (intensity - target) / se;
    out.metric("intensity", intensity);
    out.metric("target", target);
    out.metric("standard_error", se);
    out.metric("z", z);
    out.metric("expected_count", ens.report().expected_count());
    out.require(z.abs() < 4.0, format!("intensity {intensity} is {z:.2} SE from 1/2π"));
    Ok(())
}

fn variance_asymptotics(out: &mut CriterionOutcome, _seed: u64) -> Result<(), String> {
    let (model, levels) = ginibre();
    let p = 64;
    let origin = vec![0.0, 0.0];
    let functions = [
        TestFunction::cosine_bump(2, 1.0, 2.0, origin.clone()),
        TestFunction::tensor_bump(2, 1.0, 1.5, origin.clone()),
        TestFunction::gaussian_bump(2, 1.0, 1.0, 3.0, origin.clone()),
    ];
    for f in &functions {
        let exact = exact_variance_quadrature(&model, &levels, f, p).map_err(err)?;
        let pred = predicted_variance(&model, &levels, f, p).map_err(err)?;
        let ratio = exact.value / pred;
        out.metric(format!("{}_ratio", f.name()), ratio);
        out.metric(format!("{}_quadrature_change", f.name()), exact.relative_change);
        out.require((0.95..=1.05).contains(&ratio), format!("{} ratio {ratio:.4}", f.name()));
    }
    let bump = TestFunction::cosine_bump(2, 1.0, 2.5, origin);
    for big_n in 1..=2usize {
        let pure = model
            .validate_window(&SpectralWindow::pure_polyanalytic(big_n, 1))
            .map_err(err)?;
        let full = model
            .validate_window(&SpectralWindow::full_polyanalytic(big_n, 1))
            .map_err(err)?;
        let vp = exact_variance_quadrature(&model, &pure, &bump, p).map_err(err)?.value;
        let vf = exact_variance_quadrature(&model, &full, &bump, p).map_err(err)?.value;
        let ratio = vp / vf;
        let want = (2 * big_n + 1) as f64 / (big_n + 1) as f64;
        out.metric(format!("poly_N{big_n}_ratio"), ratio);
        out.metric(format!("poly_N{big_n}_target"), want);
        out.require(
            ((ratio - want) / want).abs() <= 0.02,
            format!("polyanalytic N={big_n}: {ratio:.4} vs {want:.4}"),
        );
    }
    Ok(())
}

fn lowest_window() -> SpectralWindow {
    SpectralWindow::new(0.0, 4.0 * PI, 1e-8).expect("valid window")
}

fn torus_clustering(out: &mut CriterionOutcome, _seed: u64) -> Result<(), String> {
    let model = TorusConfig::continuum_model(0.0);
    let levels = model.validate_window(&lowest_window()).map_err(err)?;
    for p in [2u32, 4, 6, 8] {
        let lattice = MagneticLattice::build(&TorusConfig::new(32, p).map_err(err)?).map_err(err)?;
        let spec = eigensolve(&lattice).map_err(err)?;
        let report = cluster_spectrum(&spec.eigenvalues, &model, 20.0 * PI, 0.05).map_err(err)?;
        let worst_center = report.clusters.iter().map(|c| c.center_deviation).fold(0.0, f64::max);
        let worst_eig = report.clusters.iter().map(|c| c.max_deviation).fold(0.0, f64::max);
        out.metric(format!("p{p}_max_center_deviation"), worst_center);
        out.metric(format!("p{p}_max_eigenvalue_deviation"), worst_eig);
        out.require(report.unassigned.is_empty(), format!("p={p}: {} unassigned eigenvalues", report.unassigned.len()));
        out.require(worst_center < 0.05, format!("p={p}: center deviation {worst_center:.4}"));
        for c in report.clusters.iter().filter(|c| c.resolved) {
            out.require(c.count == p as usize, format!("p={p}: level {} holds {} states", c.k, c.count));
        }
        let n_p = count_states(&spec.eigenvalues, &lowest_window(), &model).map_err(err)?;
        let pred = torus_demailly_prediction(&levels, p);
        out.require(n_p as f64 == pred, format!("p={p}: N_p = {n_p}, prediction {pred}"));
    }
    Ok(())
}

fn decay_scaling(out: &mut CriterionOutcome, _seed: u64) -> Result<(), String> {
    let mut fits = Vec::new();
    for p in [2u32, 8] {
        let lattice = MagneticLattice::build(&TorusConfig::new(48, p).map_err(err)?).map_err(err)?;
        let spec = eigensolve(&lattice).map_err(err)?;
        let proj = projection_kernel(&spec, &lowest_window());
        let fit = decay_fit(&proj, p);
        out.metric(format!("p{p}_rate"), fit.rate);
        out.metric(format!("p{p}_gaussian_curvature"), fit.gaussian_curvature);
        if !fit.guard_ok {
            out.note(format!("p={p}: decay length 3/√(2πp) is not below 1/4"));
        }
        if fit.truncated {
            out.note(format!("p={p}: fit truncated at the machine floor"));
        }
        out.require(fit.rate > 0.0, format!("p={p}: nonpositive rate {}", fit.rate));
        fits.push(fit);
    }
    let ratio = fits[1].rate / fits[0].rate;
    out.metric("rate_ratio", ratio);
    out.metric("curvature_ratio", fits[1].gaussian_curvature / fits[0].gaussian_curvature);
    out.require((1.6..=2.4).contains(&ratio), format!("c_8/c_2 = {ratio:.3} outside [1.6, 2.4]"));
    Ok(())
}

fn torus_lln(out: &mut CriterionOutcome, seed: u64) -> Result<(), String> {
    let f = TestFunction::periodic_cosine(2, 1.0, 1.2, 0, 1.0);
    let limit = 1.2;
    let mut zs = Vec::new();
    let mut rms = Vec::new();
    for p in [2u32, 4, 6] {
        let lattice = MagneticLattice::build(&TorusConfig::new(32, p).map_err(err)?).map_err(err)?;
        let spec = eigensolve(&lattice).map_err(err)?;
        let proj = projection_kernel(&spec, &lowest_window());
        let basis = proj.basis().map_err(err)?;
        let n_p = basis.rank();
        let run = mc_moments_rigid(|s| sample_torus_ensemble(&basis, s), &f, 2000, seed, n_p).map_err(err)?;
        let r = lln_check(&run, n_p as f64, limit, 2.2 * 2.2);
        out.metric(format!("p{p}_ratio"), r.ratio);
        out.metric(format!("p{p}_z"), r.z);
        out.metric(format!("p{p}_rms_deviation"), r.rms_deviation);
        out.require(r.variance_bound_ok, format!("p={p}: variance above sup f² N_p"));
        out.require(r.chebyshev_ok, format!("p={p}: Chebyshev tail bound violated"));
        if p == 6 {
            out.require(r.within(4.0), format!("p=6: |z| = {:.2} ≥ 4", r.z.abs()));
        }
        zs.push(r.z.abs());
        rms.push(r.rms_deviation);
    }
    out.require(
        decreasing_with_inversions(&rms, 1),
        format!("deviation from the limit does not shrink: {rms:?}"),
    );
    if !decreasing_with_inversions(&zs, 1) {
        out.note(format!("|z| across p = 2, 4, 6 is {zs:?} (noise: the mean is exactly 1.2·N_p)"));
    }
    Ok(())
}

fn flat_clt(out: &mut CriterionOutcome, seed: u64) -> Result<(), String> {
    let (model, levels) = ginibre();
    let kernel = FlatKernel::new(&model, &levels);
    let p = 64u32;
    let radius = 1.0;
    let f = TestFunction::cosine_bump(2, 1.0, radius, vec![0.0, 0.0]);
    // cover the support in magnetic units √p·radius = 8
    let grid = BoxGrid::centered(2, 8.5, 0.25);
    let ens = FlatEnsemble::new(&kernel, p, &grid).map_err(err)?;
    let pred = predicted_variance(&model, &levels, &f, p).map_err(err)?;
    let run = mc_moments(|s| ens.sample(s), &f, 2000, seed).map_err(err)?;
    let report = clt_check(&run, pred).map_err(err)?;
    let values: Vec<f64> = (0..ens.report().ground.len())
        .map(|i| f.value(&ens.physical_point(i)))
        .collect();
    let (_, discrete_var) = discrete_moments(ens.report(), &values);
    out.metric("ks", report.ks);
    out.metric("ks_critical_1pct", report.critical_1pct);
    out.metric("variance_ratio", report.variance_ratio);
    out.metric("discrete_variance_ratio", discrete_var / pred);
    out.metric("skewness", report.skewness);
    out.metric("excess_kurtosis", report.excess_kurtosis);
    out.require(report.passes_1pct(), format!("KS {:.4} ≥ {:.4}", report.ks, report.critical_1pct));
    out.require(
        (0.85..=1.15).contains(&report.variance_ratio),
        format!("variance ratio {:.4}", report.variance_ratio),
    );
    Ok(())
}

fn rigidity(out: &mut CriterionOutcome, seed: u64) -> Result<(), String> {
    let one = TestFunction::constant(2, 1.0);
    for (m, p) in [(16usize, 3u32), (24, 5), (32, 8)] {
        let lattice = MagneticLattice::build(&TorusConfig::new(m, p).map_err(err)?).map_err(err)?;
        let spec = eigensolve(&lattice).map_err(err)?;
        let basis = projection_kernel(&spec, &lowest_window()).basis().map_err(err)?;
        let run = mc_moments(|s| sample_torus_ensemble(&basis, s), &one, 1000, seed).map_err(err)?;
        let off = run.counts.iter().filter(|&&c| c != p as usize).count();
        out.metric(format!("M{m}_p{p}_count_variance"), run.count_variance());
        out.require(off == 0, format!("M={m}, p={p}: {off} samples without exactly {p} points"));
        out.require(run.count_variance() == 0.0, format!("M={m}, p={p}: Var(N[1]) ≠ 0"));
        out.require(run.variance == 0.0, format!("M={m}, p={p}: Var of the constant statistic ≠ 0"));
    }
    Ok(())
}
