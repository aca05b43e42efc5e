//! Magnetic Laplacian on the unit square torus with constant field.
//!
//! The `M × M` lattice has spacing `h = 1/M` and flux `φ = 2πp/M²` per
//! plaquette, so the total flux is `2πp` and the continuum field is `B = 2π`
//! after the `1/p` scaling. Landau levels are `2π(2k+1) + V` and every level
//! has exactly `p` states.
//!
//! Sites are numbered `i = j_x M + j_y` with coordinates `(j_x h, j_y h)`.

use std::f64::consts::PI;
use std::io::{self, Write};
use std::sync::Arc;

use faer::{c64, Mat, Side};
use thiserror::Error;

use crate::dpp::{self, DppError, GroundSet, PointSample, ProjectionBasis};
use crate::landau::{LevelSet, MagneticModel, SpectralWindow};

/// Largest lattice side handled by the dense solver.
pub const MAX_DENSE_SIDE: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TorusError {
    #[error("lattice side M = {0} is below 8")]
    SideTooSmall(usize),
    #[error("p = {p} outside 1 ≤ p ≤ M²/20 = {max} for M = {m}")]
    PowerOutOfRange { p: u32, m: usize, max: usize },
    #[error("potential has {got} values, lattice has {expected} sites")]
    PotentialSize { expected: usize, got: usize },
    #[error("potential value {0} is not finite")]
    PotentialNotFinite(f64),
    #[error("lattice side {m} exceeds the dense-solver cap {cap}")]
    SolverCap { m: usize, cap: usize },
    #[error("eigensolver failed: {0}")]
    Eigen(String),
    #[error("plaquette flux off by {0:e}")]
    Plaquette(f64),
    #[error("window endpoint {endpoint} lies inside the cluster of level {k} (span [{lo}, {hi}])")]
    EndpointInCluster { endpoint: f64, k: usize, lo: f64, hi: f64 },
    #[error("expected {expected} points, got {got}")]
    Cardinality { expected: usize, got: usize },
    #[error("torus analysis needs a one-dimensional model (n = 1), got n = {0}")]
    ModelDimension(usize),
    #[error(transparent)]
    Dpp(#[from] DppError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TorusConfig {
    m: usize,
    p: u32,
    potential: Vec<f64>,
}

impl TorusConfig {
    pub fn new(m: usize, p: u32) -> Result<Self, TorusError> {
        if m < 8 {
            return Err(TorusError::SideTooSmall(m));
        }
        let max = m * m / 20;
        if p == 0 || p as usize > max {
            return Err(TorusError::PowerOutOfRange { p, m, max });
        }
        Ok(Self {
            m,
            p,
            potential: vec![0.0; m * m],
        })
    }

    /// Zero field, unscaled Laplacian; only for checking the lattice.
    pub fn field_free(m: usize) -> Result<Self, TorusError> {
        if m < 8 {
            return Err(TorusError::SideTooSmall(m));
        }
        Ok(Self {
            m,
            p: 0,
            potential: vec![0.0; m * m],
        })
    }

    pub fn with_potential(mut self, v: Vec<f64>) -> Result<Self, TorusError> {
        if v.len() != self.m * self.m {
            return Err(TorusError::PotentialSize {
                expected: self.m * self.m,
                got: v.len(),
            });
        }
        if let Some(&bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(TorusError::PotentialNotFinite(bad));
        }
        self.potential = v;
        Ok(self)
    }

    pub fn with_constant_potential(self, c: f64) -> Result<Self, TorusError> {
        let n = self.m * self.m;
        self.with_potential(vec![c; n])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn flux_per_plaquette(&self) -> f64 {
        2.0 * PI * self.p as f64 / (self.m * self.m) as f64
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn site(&self, jx: usize, jy: usize) -> usize {
        (jx % self.m) * self.m + (jy % self.m)
    }

    pub fn site_coords(&self, i: usize) -> [f64; 2] {
        let h = self.spacing();
        [(i / self.m) as f64 * h, (i % self.m) as f64 * h]
    }

    /// The continuum model at a constant potential `v`: `n = 1`, `a = 2π`.
    pub fn continuum_model(v: f64) -> MagneticModel {
        MagneticModel::new(vec![2.0 * PI], v).expect("valid constant model")
    }
}

/// Hermitian lattice Hamiltonian with its link phases.
#[derive(Debug, Clone)]
pub struct MagneticLattice {
    config: TorusConfig,
    /// Phase on the link from `(j_x, j_y)` to `(j_x+1, j_y)`, indexed by site.
    link_x: Vec<c64>,
    /// Phase on the link from `(j_x, j_y)` to `(j_x, j_y+1)`.
    link_y: Vec<c64>,
    matrix: Mat<c64>,
}

impl MagneticLattice {
    /// Landau gauge: `U_y = e^{iφ j_x}`, `U_x = 1` except on the links
    /// closing the x-cycle, which carry `e^{−iφ M j_y}`.
    pub fn build(config: &TorusConfig) -> Result<Self, TorusError> {
        let m = config.m;
        let phi = config.flux_per_plaquette();
        let mut link_x = vec![c64::new(1.0, 0.0); m * m];
        let mut link_y = vec![c64::new(1.0, 0.0); m * m];
        for jx in 0..m {
            for jy in 0..m {
                let i = config.site(jx, jy);
                if jx == m - 1 {
                    link_x[i] = c64::from_polar(1.0, -phi * (m * jy) as f64);
                }
                link_y[i] = c64::from_polar(1.0, phi * jx as f64);
            }
        }
        let lattice = Self::assemble(config.clone(), link_x, link_y);
        let err = lattice.max_plaquette_error();
        if err > 1e-10 {
            return Err(TorusError::Plaquette(err));
        }
        Ok(lattice)
    }

    fn assemble(config: TorusConfig, link_x: Vec<c64>, link_y: Vec<c64>) -> Self {
        let m = config.m;
        let n = m * m;
        let h = config.spacing();
        let pre = if config.p == 0 {
            1.0 / (h * h)
        } else {
            1.0 / (config.p as f64 * h * h)
        };
        let mut matrix = Mat::<c64>::zeros(n, n);
        for jx in 0..m {
            for jy in 0..m {
                let i = config.site(jx, jy);
                matrix[(i, i)] += c64::new(4.0 * pre + config.potential[i], 0.0);
                for (j, u) in [(config.site(jx + 1, jy), link_x[i]), (config.site(jx, jy + 1), link_y[i])] {
                    matrix[(i, j)] -= u * pre;
                    matrix[(j, i)] -= u.conj() * pre;
                }
            }
        }
        Self {
            config,
            link_x,
            link_y,
            matrix,
        }
    }

    pub fn config(&self) -> &TorusConfig {
        &self.config
    }

    pub fn matrix(&self) -> &Mat<c64> {
        &self.matrix
    }

    /// `U_x(s) U_y(s+x̂) conj(U_x(s+ŷ)) conj(U_y(s))` for every site `s`.
    pub fn plaquettes(&self) -> Vec<c64> {
        let c = &self.config;
        let m = c.m;
        let mut out = Vec::with_capacity(m * m);
        for jx in 0..m {
            for jy in 0..m {
                let s = c.site(jx, jy);
                let right = c.site(jx + 1, jy);
                let up = c.site(jx, jy + 1);
                out.push(self.link_x[s] * self.link_y[right] * self.link_x[up].conj() * self.link_y[s].conj());
            }
        }
        out
    }

    pub fn max_plaquette_error(&self) -> f64 {
        let target = c64::from_polar(1.0, self.config.flux_per_plaquette());
        self.plaquettes().iter().map(|z| (z - target).norm()).fold(0.0, f64::max)
    }

    /// Sum of plaquette arguments; `2πp` for a quantised field.
    pub fn total_flux(&self) -> f64 {
        self.plaquettes().iter().map(|z| z.arg()).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in j..n {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Links `U(s → t) ↦ e^{iθ(s)} U e^{−iθ(t)}`; unitarily equivalent.
    pub fn gauge_transformed(&self, theta: &[f64]) -> Self {
        let c = &self.config;
        let m = c.m;
        let mut lx = self.link_x.clone();
        let mut ly = self.link_y.clone();
        for jx in 0..m {
            for jy in 0..m {
                let s = c.site(jx, jy);
                let e = |t: usize| c64::from_polar(1.0, theta[s] - theta[t]);
                lx[s] *= e(c.site(jx + 1, jy));
                ly[s] *= e(c.site(jx, jy + 1));
            }
        }
        Self::assemble(self.config.clone(), lx, ly)
    }
}

/// Ascending eigenvalues and orthonormal eigenvectors (unit Euclidean norm;
/// the site-normalised eigenfunction is `ψ = v / h`).
#[derive(Debug, Clone)]
pub struct TorusSpectrum {
    pub eigenvalues: Vec<f64>,
    pub vectors: Mat<c64>,
    pub m: usize,
}

pub fn eigensolve(lattice: &MagneticLattice) -> Result<TorusSpectrum, TorusError> {
    eigensolve_capped(lattice, MAX_DENSE_SIDE)
}

pub fn eigensolve_capped(lattice: &MagneticLattice, max_side: usize) -> Result<TorusSpectrum, TorusError> {
    let m = lattice.config.m;
    if m > max_side {
        return Err(TorusError::SolverCap { m, cap: max_side });
    }
    let eig = lattice
        .matrix
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| TorusError::Eigen(format!("{e:?}")))?;
    let s = eig.S().column_vector();
    Ok(TorusSpectrum {
        eigenvalues: (0..s.nrows()).map(|i| s[i].re).collect(),
        vectors: eig.U().to_owned(),
        m,
    })
}

/// Field-free lattice spectrum `(1/h²)(4 − 2cos(2πk/M) − 2cos(2πl/M))`, ascending.
pub fn field_free_spectrum(m: usize) -> Vec<f64> {
    let h2 = 1.0 / (m * m) as f64;
    let mut out = Vec::with_capacity(m * m);
    for k in 0..m {
        for l in 0..m {
            let t = 2.0 * PI / m as f64;
            out.push((4.0 - 2.0 * (t * k as f64).cos() - 2.0 * (t * l as f64).cos()) / h2);
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub k: usize,
    pub level: f64,
    pub count: usize,
    pub center: f64,
    /// `|center − level| / level`.
    pub center_deviation: f64,
    /// Largest `|λ − level| / level` in the cluster.
    pub max_deviation: f64,
    pub span: (f64, f64),
    /// The whole gap above the level lies below the cutoff.
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub clusters: Vec<Cluster>,
    /// Eigenvalues below the cutoff whose relative distance to the nearest
    /// level exceeds the configured width.
    pub unassigned: Vec<f64>,
    /// Per-eigenvalue `(assigned k, relative deviation)`, for eigenvalues
    /// below the cutoff.
    pub assignments: Vec<(usize, f64)>,
    /// The width reaches half the level gap, so clusters may overlap.
    pub overlapping: bool,
}

impl ClusterReport {
    pub fn lowest_count(&self) -> usize {
        self.clusters.first().map(|c| c.count).unwrap_or(0)
    }
}

fn nearest_level(model: &MagneticModel, lambda: f64) -> (usize, f64) {
    let a = model.a()[0];
    let k = (((lambda - model.v()) / a - 1.0) / 2.0).round().max(0.0) as usize;
    (k, a * (2 * k + 1) as f64 + model.v())
}

/// Assigns each eigenvalue below `cutoff` to the nearest level of `model`.
pub fn cluster_spectrum(
    eigenvalues: &[f64],
    model: &MagneticModel,
    cutoff: f64,
    width: f64,
) -> Result<ClusterReport, TorusError> {
    if model.n() != 1 {
        return Err(TorusError::ModelDimension(model.n()));
    }
    let a = model.a()[0];
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut unassigned = Vec::new();
    let mut assignments = Vec::new();
    for &l in eigenvalues.iter().filter(|&&l| l < cutoff) {
        let (k, level) = nearest_level(model, l);
        let dev = ((l - level) / level).abs();
        assignments.push((k, dev));
        if dev > width {
            unassigned.push(l);
            continue;
        }
        let c = match clusters.iter_mut().find(|c| c.k == k) {
            Some(c) => c,
            None => {
                clusters.push(Cluster {
                    k,
                    level,
                    count: 0,
                    center: 0.0,
                    center_deviation: 0.0,
                    max_deviation: 0.0,
                    span: (l, l),
                    resolved: level + a <= cutoff,
                });
                clusters.last_mut().expect("just pushed")
            }
        };
        c.count += 1;
        c.center += l;
        c.max_deviation = c.max_deviation.max(dev);
        c.span = (c.span.0.min(l), c.span.1.max(l));
    }
    for c in clusters.iter_mut() {
        c.center /= c.count as f64;
        c.center_deviation = ((c.center - c.level) / c.level).abs();
    }
    clusters.sort_by_key(|c| c.k);
    Ok(ClusterReport {
        clusters,
        unassigned,
        assignments,
        overlapping: width * cutoff.abs() >= a,
    })
}

/// Number of eigenvalues in the window. An endpoint inside the span of a
/// cluster of nearby eigenvalues is rejected.
pub fn count_states(eigenvalues: &[f64], window: &SpectralWindow, model: &MagneticModel) -> Result<usize, TorusError> {
    let limit = window.beta + model.a()[0];
    let report = cluster_spectrum(eigenvalues, model, limit, f64::INFINITY)?;
    for c in &report.clusters {
        for endpoint in [window.alpha, window.beta] {
            if endpoint >= c.span.0 && endpoint <= c.span.1 {
                return Err(TorusError::EndpointInCluster {
                    endpoint,
                    k: c.k,
                    lo: c.span.0,
                    hi: c.span.1,
                });
            }
        }
    }
    Ok(eigenvalues.iter().filter(|&&l| window.alpha < l && l < window.beta).count())
}

/// `p^n (2π)^{−n} |𝒦_I| Vol_B`; on the unit torus `Vol_B = 2π`, giving `p |𝒦_I|`.
pub fn demailly_prediction(levels: &LevelSet, p: u32, n: usize, vol_b: f64) -> f64 {
    (p as f64 / (2.0 * PI)).powi(n as i32) * levels.len() as f64 * vol_b
}

pub fn torus_demailly_prediction(levels: &LevelSet, p: u32) -> f64 {
    demailly_prediction(levels, p, 1, 2.0 * PI)
}

/// Spectral projection on sites with kernel `P(x,y) = Σ ψ(x) conj(ψ(y))`,
/// `ψ = v/h`, so that `h² Σ_z P(x,z) P(z,y) = P(x,y)` and `h² Σ P(x,x) = N_p`.
#[derive(Debug, Clone)]
pub struct SpectralProjection {
    vectors: Mat<c64>,
    config_m: usize,
    eigenvalues: Vec<f64>,
}

pub fn projection_kernel(spectrum: &TorusSpectrum, window: &SpectralWindow) -> SpectralProjection {
    let cols: Vec<usize> = (0..spectrum.eigenvalues.len())
        .filter(|&j| window.alpha < spectrum.eigenvalues[j] && spectrum.eigenvalues[j] < window.beta)
        .collect();
    let n = spectrum.vectors.nrows();
    let vectors = Mat::<c64>::from_fn(n, cols.len(), |i, c| spectrum.vectors[(i, cols[c])]);
    SpectralProjection {
        vectors,
        config_m: spectrum.m,
        eigenvalues: cols.iter().map(|&j| spectrum.eigenvalues[j]).collect(),
    }
}

impl SpectralProjection {
    pub fn rank(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn m(&self) -> usize {
        self.config_m
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    fn h2(&self) -> f64 {
        1.0 / (self.config_m * self.config_m) as f64
    }

    pub fn kernel(&self, x: usize, y: usize) -> c64 {
        let mut s = c64::new(0.0, 0.0);
        for j in 0..self.rank() {
            s += self.vectors[(x, j)] * self.vectors[(y, j)].conj();
        }
        s / self.h2()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.vectors.nrows()).map(|x| self.kernel(x, x).re).collect()
    }

    /// `h² Σ_x P(x,x)`.
    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum::<f64>() * self.h2()
    }

    /// `‖V*V − I‖_max`; `P` is idempotent exactly when this vanishes.
    pub fn idempotency_defect(&self) -> f64 {
        let g = self.vectors.adjoint() * &self.vectors;
        let k = self.rank();
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - want).norm());
            }
        }
        worst
    }

    /// Sites as the ground set of a discrete DPP, with cell measure `h²`.
    pub fn ground_set(&self) -> GroundSet {
        let m = self.config_m;
        let h = 1.0 / m as f64;
        let coords = (0..m * m).flat_map(|i| [(i / m) as f64 * h, (i % m) as f64 * h]).collect();
        GroundSet::from_points(coords, 2).expect("two coordinates per site")
    }

    pub fn basis(&self) -> Result<ProjectionBasis, TorusError> {
        Ok(ProjectionBasis::from_columns(&self.vectors, Arc::new(self.ground_set()))?)
    }

    /// `ψ_j(x) = v_j(x)/h`.
    pub fn eigenfunction(&self, j: usize, x: usize) -> c64 {
        self.vectors[(x, j)] * self.config_m as f64
    }
}

/// Shortest distance on the unit torus between two sites.
pub fn torus_distance(m: usize, a: usize, b: usize) -> f64 {
    let d = |u: usize, v: usize| {
        let t = u.abs_diff(v);
        t.min(m - t) as f64 / m as f64
    };
    d(a / m, b / m).hypot(d(a % m, b % m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayFit {
    /// `c_p = −slope` of `log|P(x₀,y)|` against `d(x₀,y)`.
    pub rate: f64,
    pub intercept: f64,
    /// `−slope` of `log|P|` against `d²`: `πp/2` for the Gaussian continuum
    /// lowest level.
    pub gaussian_curvature: f64,
    pub points_used: usize,
    /// Points below the machine floor were dropped.
    pub truncated: bool,
    /// `3/√(2πp) < 1/4`, i.e. the decay length fits well inside the torus.
    pub guard_ok: bool,
    /// `(distance, log|P|)` pairs used in the fit.
    pub profile: Vec<(f64, f64)>,
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Linear fit of `log|P(x₀, y)|` against torus distance on `[2h, 1/4]`,
/// with `x₀` the site at the origin.
pub fn decay_fit(projection: &SpectralProjection, p: u32) -> DecayFit {
    let m = projection.m();
    let h = 1.0 / m as f64;
    let origin = 0;
    let peak = projection.kernel(origin, origin).norm();
    let floor = peak * 1e3 * f64::EPSILON;
    let mut profile = Vec::new();
    let mut truncated = false;
    for y in 0..m * m {
        let d = torus_distance(m, origin, y);
        if y == origin || d < 2.0 * h - 1e-12 || d > 0.25 + 1e-12 {
            continue;
        }
        let v = projection.kernel(origin, y).norm();
        if v <= floor {
            truncated = true;
            continue;
        }
        profile.push((d, v.ln()));
    }
    profile.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let ds: Vec<f64> = profile.iter().map(|q| q.0).collect();
    let ls: Vec<f64> = profile.iter().map(|q| q.1).collect();
    let (slope, intercept) = least_squares(&ds, &ls);
    let d2: Vec<f64> = ds.iter().map(|d| d * d).collect();
    let (curv, _) = least_squares(&d2, &ls);
    DecayFit {
        rate: -slope,
        intercept,
        gaussian_curvature: -curv,
        points_used: profile.len(),
        truncated,
        guard_ok: 3.0 / (2.0 * PI * p as f64).sqrt() < 0.25,
        profile,
    }
}

/// `|det(ψ_j(x_i))|²` over the projection's eigenfunctions.
pub fn slater_density(points: &[usize], projection: &SpectralProjection) -> Result<f64, TorusError> {
    let n = projection.rank();
    if points.len() != n {
        return Err(TorusError::Cardinality {
            expected: n,
            got: points.len(),
        });
    }
    let s = Mat::<c64>::from_fn(n, n, |i, j| projection.eigenfunction(j, points[i]));
    Ok(s.determinant().norm_sqr())
}

/// `det(P(x_i, x_j))`, which equals the Slater density.
pub fn kernel_determinant(points: &[usize], projection: &SpectralProjection) -> f64 {
    let n = points.len();
    let k = Mat::<c64>::from_fn(n, n, |i, j| projection.kernel(points[i], points[j]));
    k.determinant().re
}

pub fn sample_torus_ensemble(basis: &ProjectionBasis, seed: u64) -> Result<PointSample, TorusError> {
    let s = dpp::sample_projection_dpp(basis, seed)?;
    if s.len() != basis.rank() {
        return Err(DppError::Rigidity {
            got: s.len(),
            rank: basis.rank(),
        }
        .into());
    }
    Ok(s)
}

/// `index,eigenvalue,assigned_k,deviation` for every eigenvalue below the
/// report cutoff.
pub fn write_spectrum_csv<W: Write>(w: &mut W, eigenvalues: &[f64], report: &ClusterReport) -> io::Result<()> {
    writeln!(w, "index,eigenvalue,assigned_k,deviation")?;
    for (i, (&l, &(k, dev))) in eigenvalues.iter().zip(&report.assignments).enumerate() {
        writeln!(w, "{i},{l:.16e},{k},{dev:.16e}")?;
    }
    Ok(())
}

/// `distance,log_modulus`.
pub fn write_decay_csv<W: Write>(w: &mut W, fit: &DecayFit) -> io::Result<()> {
    writeln!(w, "distance,log_modulus")?;
    for (d, l) in &fit.profile {
        writeln!(w, "{d:.16e},{l:.16e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lowest_window(v: f64) -> SpectralWindow {
        SpectralWindow::new(v, 4.0 * PI + v, 1e-8).unwrap()
    }

    fn solve(m: usize, p: u32) -> (MagneticLattice, TorusSpectrum) {
        let lat = MagneticLattice::build(&TorusConfig::new(m, p).unwrap()).unwrap();
        let s = eigensolve(&lat).unwrap();
        (lat, s)
    }

    #[test]
    fn config_guards() {
        assert!(matches!(TorusConfig::new(7, 1), Err(TorusError::SideTooSmall(7))));
        assert!(matches!(TorusConfig::new(16, 0), Err(TorusError::PowerOutOfRange { .. })));
        assert!(matches!(TorusConfig::new(16, 13), Err(TorusError::PowerOutOfRange { max: 12, .. })));
        assert!(TorusConfig::new(16, 12).is_ok());
        let c = TorusConfig::new(8, 1).unwrap();
        assert!(matches!(c.clone().with_potential(vec![0.0; 3]), Err(TorusError::PotentialSize { .. })));
        assert!(matches!(
            c.with_potential(vec![f64::NAN; 64]),
            Err(TorusError::PotentialNotFinite(_))
        ));
    }

    #[test]
    fn field_free_matches_fourier() {
        let lat = MagneticLattice::build(&TorusConfig::field_free(12).unwrap()).unwrap();
        let s = eigensolve(&lat).unwrap();
        for (a, b) in s.eigenvalues.iter().zip(field_free_spectrum(12)) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn plaquettes_and_hermiticity() {
        for (m, p) in [(8, 1), (12, 5), (20, 17)] {
            let lat = MagneticLattice::build(&TorusConfig::new(m, p).unwrap()).unwrap();
            assert!(lat.max_plaquette_error() < 1e-12);
            assert!(lat.hermiticity_defect() < 1e-14);
            assert_relative_eq!(lat.total_flux(), 2.0 * PI * p as f64, max_relative = 1e-10);
        }
    }

    #[test]
    fn lowest_cluster_m32_p4() {
        let (_, s) = solve(32, 4);
        let model = TorusConfig::continuum_model(0.0);
        let r = cluster_spectrum(&s.eigenvalues, &model, 20.0 * PI, 0.05).unwrap();
        assert_eq!(r.lowest_count(), 4);
        assert!((r.clusters[0].center - 2.0 * PI).abs() < 0.05 * 2.0 * PI);
        assert!(r.unassigned.is_empty());
        assert!(!r.overlapping);
    }

    #[test]
    fn potential_shifts_clusters() {
        let base = TorusConfig::new(16, 3).unwrap();
        let a = eigensolve(&MagneticLattice::build(&base).unwrap()).unwrap();
        let b = eigensolve(&MagneticLattice::build(&base.with_constant_potential(1.0).unwrap()).unwrap()).unwrap();
        for (x, y) in a.eigenvalues.iter().zip(&b.eigenvalues) {
            assert!((y - x - 1.0).abs() < 1e-9);
        }
        let ra = cluster_spectrum(&a.eigenvalues, &TorusConfig::continuum_model(0.0), 12.0 * PI, 0.05).unwrap();
        let rb = cluster_spectrum(&b.eigenvalues, &TorusConfig::continuum_model(1.0), 12.0 * PI + 1.0, 0.05).unwrap();
        for (ca, cb) in ra.clusters.iter().zip(&rb.clusters) {
            assert_eq!(ca.count, cb.count);
            assert!((cb.center - ca.center - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cluster_offset_depends_on_flux_density_only() {
        let model = TorusConfig::continuum_model(0.0);
        let worst = |m, p| {
            let (_, s) = solve(m, p);
            let r = cluster_spectrum(&s.eigenvalues, &model, 20.0 * PI, 0.05).unwrap();
            r.clusters.iter().map(|c| c.max_deviation).fold(0.0, f64::max)
        };
        let small = worst(20, 2);
        let large = worst(40, 8);
        assert!((small - large).abs() < 1e-10);
        assert!(worst(40, 2) < large);
    }

    #[test]
    fn state_counts() {
        let model = TorusConfig::continuum_model(0.0);
        let (_, s) = solve(32, 6);
        assert_eq!(count_states(&s.eigenvalues, &lowest_window(0.0), &model).unwrap(), 6);
        let (_, s) = solve(32, 5);
        let two = SpectralWindow::new(0.0, 8.0 * PI, 1e-8).unwrap();
        assert_eq!(count_states(&s.eigenvalues, &two, &model).unwrap(), 10);
        let levels = model.validate_window(&two).unwrap();
        assert_eq!(torus_demailly_prediction(&levels, 5), 10.0);
        let empty = SpectralWindow::new(3.0 * PI, 5.0 * PI, 1e-8).unwrap();
        assert_eq!(count_states(&s.eigenvalues, &empty, &model).unwrap(), 0);
        let through = SpectralWindow::new(0.0, s.eigenvalues[2], 1e-8).unwrap();
        assert!(matches!(
            count_states(&s.eigenvalues, &through, &model),
            Err(TorusError::EndpointInCluster { k: 0, .. })
        ));
    }

    #[test]
    fn projection_properties() {
        let (_, s) = solve(24, 14);
        let proj = projection_kernel(&s, &lowest_window(0.0));
        assert_eq!(proj.rank(), 14);
        assert!(proj.idempotency_defect() < 1e-10);
        assert_relative_eq!(proj.trace(), 14.0, max_relative = 1e-10);
        assert!((proj.kernel(3, 40) - proj.kernel(40, 3).conj()).norm() < 1e-10);
        // intensity is 1/p-periodic with amplitude ~e^{−πp/2}; flat at p = 14
        let d = proj.diagonal();
        let max = d.iter().cloned().fold(f64::MIN, f64::max);
        let min = d.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - min) / 14.0 < 1e-6, "variation {}", (max - min) / 14.0);
    }

    #[test]
    fn gauge_invariance() {
        let (lat, s) = solve(16, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let theta: Vec<f64> = (0..256).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
        let g = lat.gauge_transformed(&theta);
        assert!(g.max_plaquette_error() < 1e-12);
        let sg = eigensolve(&g).unwrap();
        for (a, b) in s.eigenvalues.iter().zip(&sg.eigenvalues) {
            assert!((a - b).abs() < 1e-10);
        }
        let pa = projection_kernel(&s, &lowest_window(0.0));
        let pb = projection_kernel(&sg, &lowest_window(0.0));
        for (x, y) in [(0, 0), (5, 77), (200, 13)] {
            assert!((pa.kernel(x, y).norm() - pb.kernel(x, y).norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn decay_fit_basics() {
        let (_, s) = solve(24, 4);
        let proj = projection_kernel(&s, &lowest_window(0.0));
        let fit = decay_fit(&proj, 4);
        assert!(fit.rate > 0.0);
        assert!(fit.profile.iter().all(|&(d, _)| d > 0.0));
        assert!(!fit.guard_ok);
        let peak = proj.kernel(0, 0).norm().ln();
        assert!(fit.profile.iter().all(|&(_, l)| l < peak));
        assert_relative_eq!(fit.gaussian_curvature, PI * 4.0 / 2.0, max_relative = 0.05);
    }

    #[test]
    fn slater_identity() {
        let (_, s) = solve(16, 4);
        let proj = projection_kernel(&s, &lowest_window(0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let mut pts: Vec<usize> = Vec::new();
            while pts.len() < 4 {
                let c = rng.random_range(0..256);
                if !pts.contains(&c) {
                    pts.push(c);
                }
            }
            let a = slater_density(&pts, &proj).unwrap();
            let b = kernel_determinant(&pts, &proj);
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-300), "{a} vs {b}");
            let mut rev = pts.clone();
            rev.reverse();
            assert!((slater_density(&rev, &proj).unwrap() - a).abs() <= 1e-10 * a);
        }
        assert!(slater_density(&[1, 1, 2, 3], &proj).unwrap() < 1e-20);
        assert!(matches!(slater_density(&[1, 2], &proj), Err(TorusError::Cardinality { .. })));
    }

    #[test]
    fn ensemble_has_np_points() {
        let (_, s) = solve(16, 5);
        let basis = projection_kernel(&s, &lowest_window(0.0)).basis().unwrap();
        for seed in 0..50 {
            let smp = sample_torus_ensemble(&basis, seed).unwrap();
            assert_eq!(smp.len(), 5);
            assert!(smp.coords.iter().all(|&c| (0.0..1.0).contains(&c)));
        }
    }

    #[test]
    fn solver_cap() {
        let lat = MagneticLattice::build(&TorusConfig::new(16, 1).unwrap()).unwrap();
        assert!(matches!(eigensolve_capped(&lat, 8), Err(TorusError::SolverCap { .. })));
    }
}
