//! Landau-level arithmetic for a constant magnetic field on ℝ^{2n}.
//!
//! With magnetic eigenvalues `0 < a_1 ≤ … ≤ a_n` and a constant potential `V`,
//! the model operator has the levels
//!
//! ```text
//! Λ_k = Σ_j (2 k_j + 1) a_j + V,    k ∈ ℤ₊ⁿ
//! ```
//!
//! each of infinite multiplicity. A spectral window `(α, β)` whose endpoints
//! stay away from every level selects the finite index set
//! `𝒦_I = { k : Λ_k ∈ (α, β) }`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandauError {
    #[error("magnetic model needs n >= 1")]
    ZeroDimension,
    #[error("expected {expected} magnetic eigenvalues, got {got}")]
    EigenvalueCount { expected: usize, got: usize },
    #[error("magnetic eigenvalues must be finite, positive and nondecreasing: {0:?}")]
    InvalidEigenvalues(Vec<f64>),
    #[error("potential must be finite, got {0}")]
    InvalidPotential(f64),
    #[error("multi-index has length {got}, model dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("window ({alpha}, {beta}) is not an interval")]
    InvalidWindow { alpha: f64, beta: f64 },
    #[error("window margin must be positive and finite, got {0}")]
    InvalidMargin(f64),
    #[error("window endpoint {endpoint} lies within {distance:e} of the level Λ = {level} (margin {margin:e})")]
    EndpointOnLevel {
        endpoint: f64,
        level: f64,
        distance: f64,
        margin: f64,
    },
}

/// Constant-coefficient magnetic model: half-dimension `n`, sorted magnetic
/// eigenvalues `a` and potential `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagneticModel {
    n: usize,
    a: Vec<f64>,
    v: f64,
}

impl MagneticModel {
    pub fn new(a: Vec<f64>, v: f64) -> Result<Self, LandauError> {
        if a.is_empty() {
            return Err(LandauError::ZeroDimension);
        }
        let sorted = a.windows(2).all(|w| w[0] <= w[1]);
        if !sorted || a.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(LandauError::InvalidEigenvalues(a));
        }
        if !v.is_finite() {
            return Err(LandauError::InvalidPotential(v));
        }
        Ok(Self { n: a.len(), a, v })
    }

    /// `n` equal eigenvalues `a` and zero potential.
    pub fn isotropic(n: usize, a: f64) -> Result<Self, LandauError> {
        Self::new(vec![a; n], 0.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn a_min(&self) -> f64 {
        self.a[0]
    }

    pub fn a_max(&self) -> f64 {
        self.a[self.n - 1]
    }

    /// `∏ a_j`, the density of the Liouville form in adapted coordinates.
    pub fn liouville_density(&self) -> f64 {
        self.a.iter().product()
    }

    /// Same magnetic eigenvalues with the potential replaced by `v`.
    pub fn with_potential(&self, v: f64) -> Result<Self, LandauError> {
        Self::new(self.a.clone(), v)
    }

    /// The lowest level `Λ_0 = Σ a_j + V`.
    pub fn ground_level(&self) -> f64 {
        self.a.iter().sum::<f64>() + self.v
    }

    pub fn landau_level(&self, k: &MultiIndex) -> Result<f64, LandauError> {
        if k.len() != self.n {
            return Err(LandauError::DimensionMismatch {
                expected: self.n,
                got: k.len(),
            });
        }
        let mut level = 0.0;
        for (kj, aj) in k.0.iter().zip(&self.a) {
            level += (2 * kj + 1) as f64 * aj;
        }
        Ok(level + self.v)
    }

    /// Every level `Λ_k ≤ cutoff` with its multi-index, sorted ascending
    /// (ties broken lexicographically on `k`).
    pub fn enumerate_levels(&self, cutoff: f64) -> LevelSet {
        let mut entries = Vec::new();
        let mut k = vec![0usize; self.n];
        let base = self.ground_level();
        if base <= cutoff {
            self.enumerate_rec(0, base, cutoff, &mut k, &mut entries);
        }
        LevelSet::from_unsorted(entries)
    }

    fn enumerate_rec(
        &self,
        axis: usize,
        level: f64,
        cutoff: f64,
        k: &mut Vec<usize>,
        out: &mut Vec<(MultiIndex, f64)>,
    ) {
        if axis == self.n {
            out.push((MultiIndex(k.clone()), level));
            return;
        }
        let step = 2.0 * self.a[axis];
        let mut current = level;
        let mut kj = 0;
        while current <= cutoff {
            k[axis] = kj;
            self.enumerate_rec(axis + 1, current, cutoff, k, out);
            kj += 1;
            current = level + step * kj as f64;
        }
        k[axis] = 0;
    }

    /// Checks that both endpoints keep at least `margin` from every level and
    /// returns `𝒦_I`. An empty result is legal; it is logged, and callers can
    /// test it with [`LevelSet::is_empty`].
    pub fn validate_window(&self, window: &SpectralWindow) -> Result<LevelSet, LandauError> {
        let reach = window.beta + window.margin;
        let all = self.enumerate_levels(reach);
        for endpoint in [window.alpha, window.beta] {
            for level in all.levels() {
                let distance = (level - endpoint).abs();
                if distance < window.margin {
                    return Err(LandauError::EndpointOnLevel {
                        endpoint,
                        level,
                        distance,
                        margin: window.margin,
                    });
                }
            }
        }
        let inside: Vec<_> = all
            .entries
            .into_iter()
            .filter(|(_, l)| *l > window.alpha && *l < window.beta)
            .collect();
        let set = LevelSet { entries: inside };
        if set.is_empty() {
            log::warn!(
                "spectral window ({}, {}) contains no Landau level; the process is empty",
                window.alpha,
                window.beta
            );
        }
        Ok(set)
    }

    /// Window isolating the single level `Λ_k` with half-width `a_min`.
    pub fn window_around(&self, k: &MultiIndex) -> Result<SpectralWindow, LandauError> {
        let level = self.landau_level(k)?;
        SpectralWindow::new(level - self.a_min(), level + self.a_min(), self.default_margin())
    }

    /// `10⁻⁸ · max a_j`.
    pub fn default_margin(&self) -> f64 {
        1e-8 * self.a_max()
    }
}

/// A multi-index `k ∈ ℤ₊ⁿ` labelling a Landau level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn new(k: Vec<usize>) -> Self {
        Self(k)
    }

    pub fn zero(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `|k| = Σ k_j`.
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// `k + e_axis`.
    pub fn raised(&self, axis: usize) -> Self {
        let mut k = self.0.clone();
        k[axis] += 1;
        Self(k)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, k) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{k}")?;
        }
        write!(f, ")")
    }
}

/// Open interval `(alpha, beta)` together with the minimum distance its
/// endpoints must keep from the level set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralWindow {
    pub alpha: f64,
    pub beta: f64,
    pub margin: f64,
}

impl SpectralWindow {
    pub fn new(alpha: f64, beta: f64, margin: f64) -> Result<Self, LandauError> {
        if !(alpha.is_finite() && beta.is_finite() && alpha < beta) {
            return Err(LandauError::InvalidWindow { alpha, beta });
        }
        if !(margin.is_finite() && margin > 0.0) {
            return Err(LandauError::InvalidMargin(margin));
        }
        Ok(Self {
            alpha,
            beta,
            margin,
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.alpha && x < self.beta
    }

    /// The pure window `(2N+n−1, 2N+n+1)` around the `N`-th level of the
    /// isotropic model `a ≡ 1, V = 0`.
    pub fn pure_polyanalytic(level: usize, n: usize) -> Self {
        let centre = (2 * level + n) as f64;
        Self {
            alpha: centre - 1.0,
            beta: centre + 1.0,
            margin: 1e-8,
        }
    }

    /// The full window `(n−1, 2N+n+1)` covering levels `0..=N` of the
    /// isotropic model `a ≡ 1, V = 0`.
    pub fn full_polyanalytic(level: usize, n: usize) -> Self {
        Self {
            alpha: n as f64 - 1.0,
            beta: (2 * level + n) as f64 + 1.0,
            margin: 1e-8,
        }
    }
}

/// Multi-indices with their levels, sorted by level. Degenerate levels keep
/// one entry per multi-index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LevelSet {
    entries: Vec<(MultiIndex, f64)>,
}

impl LevelSet {
    fn from_unsorted(mut entries: Vec<(MultiIndex, f64)>) -> Self {
        entries.sort_by(|(ka, la), (kb, lb)| la.total_cmp(lb).then_with(|| ka.cmp(kb)));
        Self { entries }
    }

    /// Builds a level set from explicit multi-indices of `model`.
    pub fn from_indices(
        model: &MagneticModel,
        indices: impl IntoIterator<Item = MultiIndex>,
    ) -> Result<Self, LandauError> {
        let mut entries = Vec::new();
        for k in indices {
            let level = model.landau_level(&k)?;
            entries.push((k, level));
        }
        entries.dedup();
        Ok(Self::from_unsorted(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(MultiIndex, f64)] {
        &self.entries
    }

    pub fn indices(&self) -> impl Iterator<Item = &MultiIndex> {
        self.entries.iter().map(|(k, _)| k)
    }

    pub fn levels(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(_, l)| *l)
    }

    pub fn contains(&self, k: &MultiIndex) -> bool {
        self.entries.iter().any(|(q, _)| q == k)
    }

    /// Largest `|k|` in the set, `None` when empty.
    pub fn max_total(&self) -> Option<usize> {
        self.indices().map(MultiIndex::total).max()
    }
}
