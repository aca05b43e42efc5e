//! Exact kernels of the flat model on `ℝ^{2n}` and the expectation/variance
//! of linear statistics, both exact and asymptotic.
//!
//! Points are real vectors `Z` of length `2n` with `z_j = Z_{2j} + i Z_{2j+1}`
//! (0-based). Under `Z ↦ √p Z` the model at tensor power `p` is conjugate to
//! the one at `p = 1`, so `scaled_kernel` is exact, not an approximation.

use std::f64::consts::PI;

use faer::c64;
use log::warn;
use thiserror::Error;

use crate::landau::{LandauError, LevelSet, MagneticModel};
use crate::laguerre::{alpha_vector, df_norm_with_alphas, LaguerreError};
use crate::quadrature::{
    composite_rule, integrate_box, pairwise_sum, CubatureOptions, QuadratureError, TensorRule,
};
use crate::testfn::TestFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("point has {got} coordinates, model needs {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("tensor power must be at least 1")]
    ZeroPower,
    #[error("test function '{0}' has no compact support")]
    NoSupport(String),
    #[error("kernel modulus still {ratio:e} of its peak at truncation radius {radius}")]
    TruncationBound { radius: f64, ratio: f64 },
    #[error(transparent)]
    Landau(#[from] LandauError),
    #[error(transparent)]
    Laguerre(#[from] LaguerreError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

fn check_dim(n: usize, z: &[f64]) -> Result<(), KernelError> {
    if z.len() != 2 * n {
        return Err(KernelError::DimensionMismatch {
            expected: 2 * n,
            got: z.len(),
        });
    }
    Ok(())
}

/// Precomputed window projection kernel `𝒫_I` of a flat model.
#[derive(Debug, Clone)]
pub struct FlatKernel {
    a: Vec<f64>,
    indices: Vec<Vec<usize>>,
    max_degree: Vec<usize>,
    prefactor: f64,
}

impl FlatKernel {
    pub fn new(model: &MagneticModel, levels: &LevelSet) -> Self {
        let n = model.n();
        let indices: Vec<Vec<usize>> = levels.indices().map(|k| k.as_slice().to_vec()).collect();
        let mut max_degree = vec![0; n];
        for k in &indices {
            for (m, &kj) in max_degree.iter_mut().zip(k) {
                *m = (*m).max(kj);
            }
        }
        if indices.is_empty() {
            warn!("empty level set: window kernel is identically zero");
        }
        Self {
            a: model.a().to_vec(),
            indices,
            max_degree,
            prefactor: model.liouville_density() / (2.0 * PI).powi(n as i32),
        }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn rank_per_volume(&self) -> usize {
        self.indices.len()
    }

    /// `(2π)^{−n} |𝒦_I| ∏ a_j`.
    pub fn diagonal(&self) -> f64 {
        self.prefactor * self.indices.len() as f64
    }

    /// `Σ_{k∈𝒦} ∏_j L_{k_j}(a_j |w_j|²/2)` given `|w_j|²` per complex plane.
    pub fn laguerre_factor(&self, plane_sq: &[f64]) -> f64 {
        if self.indices.is_empty() {
            return 0.0;
        }
        let tables: Vec<Vec<f64>> = plane_sq
            .iter()
            .zip(&self.a)
            .zip(&self.max_degree)
            .map(|((&r2, &a), &deg)| laguerre_upto(deg, 0.5 * a * r2))
            .collect();
        self.indices
            .iter()
            .map(|k| k.iter().enumerate().map(|(j, &kj)| tables[j][kj]).product::<f64>())
            .sum()
    }

    /// `|𝒫_I(Z, Z′)|²` as a function of `|z_j − z′_j|²`.
    pub fn modulus_sq(&self, plane_sq: &[f64]) -> f64 {
        let gauss: f64 = plane_sq.iter().zip(&self.a).map(|(r2, a)| -0.5 * a * r2).sum();
        let l = self.laguerre_factor(plane_sq);
        self.prefactor * self.prefactor * l * l * gauss.exp()
    }

    pub fn eval(&self, z: &[f64], zp: &[f64]) -> c64 {
        let n = self.n();
        let mut plane_sq = vec![0.0; n];
        let mut re = 0.0;
        let mut im = 0.0;
        for j in 0..n {
            let (x, y) = (z[2 * j], z[2 * j + 1]);
            let (xp, yp) = (zp[2 * j], zp[2 * j + 1]);
            let d2 = (x - xp) * (x - xp) + (y - yp) * (y - yp);
            plane_sq[j] = d2;
            re -= 0.25 * self.a[j] * d2;
            // Im(z conj(z′)) = y x′ − x y′
            im += 0.5 * self.a[j] * (y * xp - x * yp);
        }
        let modulus = self.prefactor * self.laguerre_factor(&plane_sq) * re.exp();
        c64::new(modulus * im.cos(), modulus * im.sin())
    }

    /// `p^n 𝒫_I(√p Z, √p Z′)`.
    pub fn eval_scaled(&self, p: f64, z: &[f64], zp: &[f64]) -> c64 {
        let s = p.sqrt();
        let zs: Vec<f64> = z.iter().map(|v| v * s).collect();
        let zps: Vec<f64> = zp.iter().map(|v| v * s).collect();
        self.eval(&zs, &zps) * p.powi(self.n() as i32)
    }
}

fn laguerre_upto(deg: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(deg + 1);
    out.push(1.0);
    if deg >= 1 {
        out.push(1.0 - x);
    }
    for k in 1..deg {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - x) * out[k] - kf * out[k - 1]) / (kf + 1.0);
        out.push(next);
    }
    out
}

/// Kernel of the projection onto a single Landau eigenspace `k`.
pub fn eigenkernel(
    model: &MagneticModel,
    k: &crate::landau::MultiIndex,
    z: &[f64],
    zp: &[f64],
) -> Result<c64, KernelError> {
    let n = model.n();
    check_dim(n, z)?;
    check_dim(n, zp)?;
    let levels = LevelSet::from_indices(model, std::iter::once(k.clone()))?;
    Ok(FlatKernel::new(model, &levels).eval(z, zp))
}

pub fn window_kernel(
    model: &MagneticModel,
    levels: &LevelSet,
    z: &[f64],
    zp: &[f64],
) -> Result<c64, KernelError> {
    check_dim(model.n(), z)?;
    check_dim(model.n(), zp)?;
    Ok(FlatKernel::new(model, levels).eval(z, zp))
}

pub fn scaled_kernel(
    model: &MagneticModel,
    levels: &LevelSet,
    p: u32,
    z: &[f64],
    zp: &[f64],
) -> Result<c64, KernelError> {
    if p == 0 {
        return Err(KernelError::ZeroPower);
    }
    check_dim(model.n(), z)?;
    check_dim(model.n(), zp)?;
    Ok(FlatKernel::new(model, levels).eval_scaled(p as f64, z, zp))
}

fn support_box(f: &TestFunction) -> Result<(Vec<f64>, Vec<f64>), KernelError> {
    let s = f
        .support()
        .ok_or_else(|| KernelError::NoSupport(f.name().to_string()))?;
    Ok((s.lower(), s.upper()))
}

/// `∫ f dZ` over the support box.
pub fn integrate_function(f: &TestFunction, opts: &CubatureOptions) -> Result<f64, KernelError> {
    let (lo, hi) = support_box(f)?;
    Ok(integrate_box(&|x: &[f64]| f.value(x), &lo, &hi, opts)?.value)
}

/// `p^n (2π)^{−n} |𝒦_I| ∫ f Ω_B`.
pub fn predicted_expectation(
    model: &MagneticModel,
    levels: &LevelSet,
    f: &TestFunction,
    p: u32,
) -> Result<f64, KernelError> {
    predicted_expectation_with(model, levels, f, p, &CubatureOptions::default())
}

pub fn predicted_expectation_with(
    model: &MagneticModel,
    levels: &LevelSet,
    f: &TestFunction,
    p: u32,
    opts: &CubatureOptions,
) -> Result<f64, KernelError> {
    if p == 0 {
        return Err(KernelError::ZeroPower);
    }
    check_dim(model.n(), &vec![0.0; f.dim()])?;
    if levels.is_empty() {
        return Ok(0.0);
    }
    let n = model.n() as i32;
    let integral = integrate_function(f, opts)?;
    Ok((p as f64 / (2.0 * PI)).powi(n) * levels.len() as f64 * model.liouville_density() * integral)
}

/// `(1/4π)(p/2π)^{n−1} ∫ |df|²_I Ω_B`.
pub fn predicted_variance(
    model: &MagneticModel,
    levels: &LevelSet,
    f: &TestFunction,
    p: u32,
) -> Result<f64, KernelError> {
    predicted_variance_with(model, levels, f, p, &CubatureOptions::default())
}

pub fn predicted_variance_with(
    model: &MagneticModel,
    levels: &LevelSet,
    f: &TestFunction,
    p: u32,
    opts: &CubatureOptions,
) -> Result<f64, KernelError> {
    if p == 0 {
        return Err(KernelError::ZeroPower);
    }
    let n = model.n();
    check_dim(n, &vec![0.0; f.dim()])?;
    if levels.is_empty() {
        return Ok(0.0);
    }
    let alphas = alpha_vector(levels, n)?;
    let a = model.a().to_vec();
    let (lo, hi) = support_box(f)?;
    let integrand = |x: &[f64]| {
        let mut g = vec![0.0; x.len()];
        f.gradient_into(x, &mut g);
        df_norm_with_alphas(&a, &alphas, &g)
    };
    let integral = integrate_box(&integrand, &lo, &hi, opts)?.value;
    let prefactor = (p as f64 / (2.0 * PI)).powi(n as i32 - 1) / (4.0 * PI);
    Ok(prefactor * model.liouville_density() * integral)
}

#[derive(Debug, Clone, Copy)]
pub struct ExactVarianceOptions {
    /// Composite Gauss–Legendre panels on the radial axis of each plane.
    pub radial_panels: usize,
    /// Trapezoid nodes on the angle of each plane.
    pub angular_nodes: usize,
    /// Composite Gauss–Legendre panels per axis of the `x` integral.
    pub x_panels: usize,
    pub order: usize,
    pub max_nodes: u128,
}

impl Default for ExactVarianceOptions {
    fn default() -> Self {
        Self {
            radial_panels: 12,
            angular_nodes: 24,
            x_panels: 28,
            order: 6,
            max_nodes: 2_000_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactVariance {
    pub value: f64,
    /// Same computation on a grid with half the resolution.
    pub coarse_value: f64,
    pub relative_change: f64,
    /// Truncation radius of the `u = x − y` integral, per complex plane.
    pub radius: f64,
    pub nodes: u128,
}

/// `½ ∬ |K_p(x,y)|² (f(x) − f(y))² dx dy`.
///
/// With `u = x − y` this is `½ ∫ |K_p|²(u) G(u) du`, where
/// `G(u) = ∫ (f(x+u) − f(x))² dx`. The `u` integral uses polar coordinates in
/// each complex plane, cut at `e^{−p a_min |u|²/4} = 10⁻¹⁶` and widened if
/// the Laguerre factor keeps the modulus above `10⁻²⁰` of its peak there.
pub fn exact_variance_quadrature(
    model: &MagneticModel,
    levels: &LevelSet,
    f: &TestFunction,
    p: u32,
) -> Result<ExactVariance, KernelError> {
    exact_variance_with(model, levels, f, p, &ExactVarianceOptions::default())
}

pub fn exact_variance_with(
    model: &MagneticModel,
    levels: &LevelSet,
    f: &TestFunction,
    p: u32,
    opts: &ExactVarianceOptions,
) -> Result<ExactVariance, KernelError> {
    if p == 0 {
        return Err(KernelError::ZeroPower);
    }
    let n = model.n();
    check_dim(n, &vec![0.0; f.dim()])?;
    let (lo, hi) = support_box(f)?;
    if levels.is_empty() {
        return Ok(ExactVariance {
            value: 0.0,
            coarse_value: 0.0,
            relative_change: 0.0,
            radius: 0.0,
            nodes: 0,
        });
    }
    let kernel = FlatKernel::new(model, levels);
    let pf = p as f64;
    let radius = truncation_radius(&kernel, pf, model.a_min())?;

    let fine = variance_on_grid(&kernel, f, pf, radius, &lo, &hi, *opts)?;
    let coarse_opts = ExactVarianceOptions {
        radial_panels: (opts.radial_panels / 2).max(1),
        angular_nodes: (opts.angular_nodes * 2 / 3).max(3),
        x_panels: (opts.x_panels / 2).max(1),
        ..*opts
    };
    let coarse = variance_on_grid(&kernel, f, pf, radius, &lo, &hi, coarse_opts)?;
    let relative_change = if fine.0 == 0.0 {
        (fine.0 - coarse.0).abs()
    } else {
        ((fine.0 - coarse.0) / fine.0).abs()
    };
    Ok(ExactVariance {
        value: fine.0,
        coarse_value: coarse.0,
        relative_change,
        radius,
        nodes: fine.1,
    })
}

fn truncation_radius(kernel: &FlatKernel, p: f64, a_min: f64) -> Result<f64, KernelError> {
    const TAIL: f64 = 1e-20;
    let n = kernel.n();
    let mut radius = (4.0 * 16.0 * std::f64::consts::LN_10 / (p * a_min)).sqrt();
    let peak = kernel.modulus_sq(&vec![0.0; n]);
    let tail_ratio = |r: f64| {
        // worst plane with the others at the origin, sampled on [r, 2r]
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for s in 0..16 {
                let mut planes = vec![0.0; n];
                let rr = r * (1.0 + s as f64 / 15.0) * p.sqrt();
                planes[j] = rr * rr;
                worst = worst.max(kernel.modulus_sq(&planes) / peak);
            }
        }
        worst
    };
    for _ in 0..20 {
        let ratio = tail_ratio(radius);
        if ratio <= TAIL {
            return Ok(radius);
        }
        radius *= 1.2;
    }
    Err(KernelError::TruncationBound {
        radius,
        ratio: tail_ratio(radius),
    })
}

fn variance_on_grid(
    kernel: &FlatKernel,
    f: &TestFunction,
    p: f64,
    radius: f64,
    lo: &[f64],
    hi: &[f64],
    opts: ExactVarianceOptions,
) -> Result<(f64, u128), KernelError> {
    let n = kernel.n();
    let (rs, rw) = composite_rule(0.0, radius, opts.radial_panels, opts.order);
    let na = opts.angular_nodes;
    // one complex plane: (u_x, u_y, |u|², weight incl. Jacobian r)
    let mut plane: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(rs.len() * na);
    for (&r, &w) in rs.iter().zip(&rw) {
        for t in 0..na {
            let th = 2.0 * PI * t as f64 / na as f64;
            plane.push((r * th.cos(), r * th.sin(), r * r, w * r * 2.0 * PI / na as f64));
        }
    }
    let u_count = (plane.len() as u128).pow(n as u32);
    let x_count = ((opts.x_panels * opts.order) as u128).pow(2 * n as u32);
    let nodes = u_count * x_count;
    if nodes > opts.max_nodes {
        return Err(QuadratureError::NodeBudget {
            needed: nodes,
            budget: opts.max_nodes,
        }
        .into());
    }
    let pn = p.powi(n as i32);
    let mut terms = Vec::with_capacity(u_count as usize);
    let mut idx = vec![0usize; n];
    let mut u = vec![0.0; 2 * n];
    let mut planes_sq = vec![0.0; n];
    loop {
        let mut w = 1.0;
        for j in 0..n {
            let (ux, uy, r2, wj) = plane[idx[j]];
            u[2 * j] = ux;
            u[2 * j + 1] = uy;
            planes_sq[j] = p * r2;
            w *= wj;
        }
        let k2 = pn * pn * kernel.modulus_sq(&planes_sq);
        if k2 > 0.0 {
            terms.push(0.5 * w * k2 * shift_energy(f, &u, lo, hi, &opts));
        }
        // odometer over planes
        let mut j = 0;
        loop {
            if j == n {
                return Ok((pairwise_sum(&terms), nodes));
            }
            idx[j] += 1;
            if idx[j] < plane.len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

/// `G(u) = ∫ (f(x+u) − f(x))² dx` over the union of `supp f` and `supp f − u`.
fn shift_energy(f: &TestFunction, u: &[f64], lo: &[f64], hi: &[f64], opts: &ExactVarianceOptions) -> f64 {
    let lower: Vec<f64> = lo.iter().zip(u).map(|(l, ui)| l.min(l - ui)).collect();
    let upper: Vec<f64> = hi.iter().zip(u).map(|(h, ui)| h.max(h - ui)).collect();
    let rule = TensorRule::composite_box(&lower, &upper, opts.x_panels, opts.order);
    rule.integrate(&|x: &[f64]| {
        let shifted: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + b).collect();
        let d = f.value(&shifted) - f.value(x);
        d * d
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landau::{MultiIndex, SpectralWindow};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ginibre() -> (MagneticModel, LevelSet) {
        let m = MagneticModel::isotropic(1, 1.0).unwrap();
        let l = LevelSet::from_indices(&m, [MultiIndex::zero(1)]).unwrap();
        (m, l)
    }

    fn levels(m: &MagneticModel, ks: &[Vec<usize>]) -> LevelSet {
        LevelSet::from_indices(m, ks.iter().cloned().map(MultiIndex::new)).unwrap()
    }

    #[test]
    fn bergman_diagonal() {
        let (m, _) = ginibre();
        let v = eigenkernel(&m, &MultiIndex::zero(1), &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_relative_eq!(v.re, 1.0 / (2.0 * PI), epsilon = 1e-15);
        assert_eq!(v.im, 0.0);

        let m = MagneticModel::new(vec![0.5, 1.5], 0.0).unwrap();
        for k in [vec![0, 0], vec![3, 1], vec![7, 2]] {
            let v = eigenkernel(&m, &MultiIndex::new(k), &[0.0; 4], &[0.0; 4]).unwrap();
            assert_relative_eq!(v.re, 0.75 / (4.0 * PI * PI), epsilon = 1e-15);
        }
    }

    #[test]
    fn window_and_scaled_examples() {
        let (m, single) = ginibre();
        let two = levels(&m, &[vec![0], vec![1]]);
        let z = [0.3, -1.1];
        assert_relative_eq!(window_kernel(&m, &two, &z, &z).unwrap().re, 2.0 / (2.0 * PI), epsilon = 1e-14);

        let zp = [0.7, 0.2];
        let a = window_kernel(&m, &single, &z, &zp).unwrap();
        let b = eigenkernel(&m, &MultiIndex::zero(1), &z, &zp).unwrap();
        assert_eq!(a, b);

        assert_eq!(scaled_kernel(&m, &two, 1, &z, &zp).unwrap(), window_kernel(&m, &two, &z, &zp).unwrap());
        assert_relative_eq!(scaled_kernel(&m, &two, 9, &z, &z).unwrap().re, 9.0 * 2.0 / (2.0 * PI), max_relative = 1e-14);

        let v = scaled_kernel(&m, &single, 4, &[0.0, 0.0], &[0.5, 0.0]).unwrap();
        assert_relative_eq!(v.norm(), 4.0 / (2.0 * PI) * (-0.25f64).exp(), max_relative = 1e-14);

        assert!(matches!(
            window_kernel(&m, &single, &[0.0], &[0.0, 0.0]),
            Err(KernelError::DimensionMismatch { .. })
        ));
        assert!(matches!(scaled_kernel(&m, &single, 0, &z, &z), Err(KernelError::ZeroPower)));
    }

    #[test]
    fn empty_window_is_zero() {
        let m = MagneticModel::isotropic(1, 1.0).unwrap();
        let empty = LevelSet::from_indices(&m, std::iter::empty()).unwrap();
        assert_eq!(window_kernel(&m, &empty, &[0.0, 0.0], &[0.0, 0.0]).unwrap(), c64::new(0.0, 0.0));
    }

    fn unit_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-3.0f64..3.0, 2 * n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hermitian_symmetry(z in unit_vec(2), zp in unit_vec(2), k0 in 0usize..5, k1 in 0usize..5) {
            let m = MagneticModel::new(vec![1.0, 2.3], 0.0).unwrap();
            let k = MultiIndex::new(vec![k0, k1]);
            let a = eigenkernel(&m, &k, &z, &zp).unwrap();
            let b = eigenkernel(&m, &k, &zp, &z).unwrap().conj();
            prop_assert!((a - b).norm() <= 1e-14 * a.norm().max(1e-300));
        }

        #[test]
        fn modulus_is_translation_invariant(z in unit_vec(1), zp in unit_vec(1), s in unit_vec(1)) {
            let m = MagneticModel::isotropic(1, 1.3).unwrap();
            let l = levels(&m, &[vec![0], vec![1], vec![2]]);
            let a = window_kernel(&m, &l, &z, &zp).unwrap().norm_sqr();
            let zs: Vec<f64> = z.iter().zip(&s).map(|(x, y)| x + y).collect();
            let zps: Vec<f64> = zp.iter().zip(&s).map(|(x, y)| x + y).collect();
            let b = window_kernel(&m, &l, &zs, &zps).unwrap().norm_sqr();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-200));
        }

        #[test]
        fn diagonal_identity(z in unit_vec(2)) {
            let m = MagneticModel::new(vec![0.7, 1.9], 0.4).unwrap();
            let l = levels(&m, &[vec![0, 0], vec![1, 0], vec![0, 2]]);
            let v = window_kernel(&m, &l, &z, &z).unwrap();
            let want = 3.0 * 0.7 * 1.9 / (4.0 * PI * PI);
            prop_assert!((v.re - want).abs() <= 1e-15);
            prop_assert!(v.im.abs() <= 1e-16);
        }
    }

    #[test]
    fn modulus_matches_direct_evaluation() {
        let m = MagneticModel::isotropic(1, 2.0).unwrap();
        let l = levels(&m, &[vec![1], vec![3]]);
        let k = FlatKernel::new(&m, &l);
        let z = [0.4, 0.9];
        let zp = [-0.2, 0.1];
        let d2 = 0.36 + 0.64;
        assert_relative_eq!(k.eval(&z, &zp).norm_sqr(), k.modulus_sq(&[d2]), max_relative = 1e-13);
    }

    #[test]
    fn predicted_expectation_examples() {
        let (m, l) = ginibre();
        // tensor bump A cos²(πx/2w)cos²(πy/2w) integrates to A w²
        let f = TestFunction::tensor_bump(2, 2.0 * PI, 1.0, vec![0.0, 0.0]);
        assert_relative_eq!(predicted_expectation(&m, &l, &f, 10).unwrap(), 10.0, max_relative = 1e-8);
        let two = levels(&m, &[vec![0], vec![1]]);
        assert_relative_eq!(predicted_expectation(&m, &two, &f, 10).unwrap(), 20.0, max_relative = 1e-8);
        let zero = TestFunction::cosine_bump(2, 0.0, 1.0, vec![0.0, 0.0]);
        assert_eq!(predicted_expectation(&m, &l, &zero, 3).unwrap(), 0.0);
        let unbounded = TestFunction::constant(2, 1.0);
        assert!(matches!(predicted_expectation(&m, &l, &unbounded, 1), Err(KernelError::NoSupport(_))));
    }

    #[test]
    fn predicted_variance_examples() {
        let (m, l) = ginibre();
        // rescale the amplitude so that ∫|∇f|² = 4π
        let f = TestFunction::cosine_bump(2, 1.0, 1.5, vec![0.0, 0.0]);
        let base = predicted_variance(&m, &l, &f, 1).unwrap();
        let amp = (1.0 / base).sqrt();
        let g = TestFunction::cosine_bump(2, amp, 1.5, vec![0.0, 0.0]);
        for p in [1, 7, 64] {
            assert_relative_eq!(predicted_variance(&m, &l, &g, p).unwrap(), 1.0, max_relative = 1e-8);
        }
        // radial oracle for ∫|∇f|² of the unit-amplitude bump
        let r: f64 = 1.5;
        let radial = |s: f64| {
            let d = -(PI / (2.0 * r)) * (PI * s / r).sin();
            d * d * 2.0 * PI * s
        };
        let (xs, ws) = composite_rule(0.0, r, 64, 8);
        let grad_energy: f64 = xs.iter().zip(&ws).map(|(x, w)| w * radial(*x)).sum();
        assert_relative_eq!(base, grad_energy / (4.0 * PI), max_relative = 1e-8);
    }

    #[test]
    fn polyanalytic_predicted_ratio() {
        let m = MagneticModel::isotropic(1, 1.0).unwrap();
        let f = TestFunction::cosine_bump(2, 1.0, 2.0, vec![0.0, 0.0]);
        for big_n in 1..=3usize {
            let pure = m.validate_window(&SpectralWindow::pure_polyanalytic(big_n, 1)).unwrap();
            let full = m.validate_window(&SpectralWindow::full_polyanalytic(big_n, 1)).unwrap();
            let r = predicted_variance(&m, &pure, &f, 8).unwrap() / predicted_variance(&m, &full, &f, 8).unwrap();
            let want = (2 * big_n + 1) as f64 / (big_n + 1) as f64;
            assert_relative_eq!(r, want, max_relative = 1e-10);
        }
    }

    fn effectively_compact_gaussian(sigma: f64) -> TestFunction {
        let s2 = sigma * sigma;
        TestFunction::from_closures(
            "gaussian",
            2,
            None,
            Some(10.0 * sigma),
            move |x| (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * s2)).exp(),
            move |x, g| {
                let e = (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * s2)).exp();
                g[0] = -x[0] / s2 * e;
                g[1] = -x[1] / s2 * e;
            },
        )
    }

    #[test]
    fn exact_variance_gaussian_oracle() {
        // Ginibre at power p with f = exp(−|x|²/2σ²): V = ¼ p / (p + 1/(2σ²))
        let (m, l) = ginibre();
        let sigma = 0.5;
        let f = effectively_compact_gaussian(sigma);
        let opts = ExactVarianceOptions {
            x_panels: 40,
            ..Default::default()
        };
        for p in [1u32, 4, 64] {
            let got = exact_variance_with(&m, &l, &f, p, &opts).unwrap();
            let pf = p as f64;
            let want = 0.25 * pf / (pf + 1.0 / (2.0 * sigma * sigma));
            assert_relative_eq!(got.value, want, max_relative = 1e-6);
            assert!(got.relative_change < 1e-3);
        }
    }

    #[test]
    fn exact_variance_symmetries() {
        let (m, l) = ginibre();
        let f = TestFunction::cosine_bump(2, 1.0, 1.0, vec![0.0, 0.0]);
        let g = TestFunction::cosine_bump(2, -1.0, 1.0, vec![0.0, 0.0]);
        let zero = TestFunction::cosine_bump(2, 0.0, 1.0, vec![0.0, 0.0]);
        let opts = ExactVarianceOptions {
            x_panels: 12,
            radial_panels: 6,
            angular_nodes: 12,
            ..Default::default()
        };
        let a = exact_variance_with(&m, &l, &f, 16, &opts).unwrap().value;
        let b = exact_variance_with(&m, &l, &g, 16, &opts).unwrap().value;
        assert_eq!(a, b);
        assert_eq!(exact_variance_with(&m, &l, &zero, 16, &opts).unwrap().value, 0.0);
    }

    #[test]
    fn exact_variance_budget() {
        let (m, l) = ginibre();
        let f = TestFunction::cosine_bump(2, 1.0, 1.0, vec![0.0, 0.0]);
        let opts = ExactVarianceOptions {
            max_nodes: 1000,
            ..Default::default()
        };
        assert!(matches!(
            exact_variance_with(&m, &l, &f, 4, &opts),
            Err(KernelError::Quadrature(QuadratureError::NodeBudget { .. }))
        ));
    }
}
