//! Determinantal point processes on a finite ground set.
//!
//! A continuum kernel is restricted to midpoint nodes of a box (Nyström), the
//! weighted matrix `K̃_ij = √w_i K(x_i, x_j) √w_j` is diagonalised, and
//! samples are drawn by Bernoulli selection of eigenvectors followed by the
//! sequential chain rule for projection kernels.

use std::io::{self, Write};
use std::sync::Arc;

use faer::{c64, Mat, Side};
use log::{debug, warn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernel::FlatKernel;

/// Eigenvalues this far outside `[0, 1]` are clipped; beyond it the kernel is
/// rejected.
pub const CLIP_TOLERANCE: f64 = 1e-6;
/// Deflated residual norm below which a draw counts as numerical rank loss.
pub const RANK_LOSS_NORM: f64 = 1e-12;
/// Relative norm below which a second Gram–Schmidt pass is run.
pub const REORTHOGONALIZE_BELOW: f64 = 1e-6;
/// Eigenvalues of a low-rank factorisation below this are dropped.
pub const LOW_RANK_CUTOFF: f64 = 1e-10;

const MAX_RANK_LOSS_RETRIES: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DppError {
    #[error("kernel matrix is not Hermitian (max asymmetry {0:e})")]
    NotHermitian(f64),
    #[error("kernel eigenvalue {0} outside [0, 1]")]
    SpectrumOutOfRange(f64),
    #[error("grid would have {needed} nodes, cap is {cap}")]
    NodeBudget { needed: u128, cap: usize },
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("projection basis is not orthonormal (defect {0:e})")]
    NotOrthonormal(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("eigensolver failed: {0}")]
    Eigen(String),
    #[error("chain-rule sampler hit numerical rank loss {0} times in a row (seed {1})")]
    RankLoss(usize, u64),
    #[error("sample drew {got} points from a rank-{rank} projection")]
    Rigidity { got: usize, rank: usize },
    #[error("correlation determinant {0:e} is negative beyond rounding")]
    NegativeDeterminant(f64),
    #[error("repeated node {0} in a sample")]
    RepeatedIndex(usize),
}

/// Nodes of a discrete ground set, with the cell geometry they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundSet {
    coords: Vec<f64>,
    dim: usize,
    step: Option<f64>,
    jitter: bool,
}

impl GroundSet {
    pub fn from_points(coords: Vec<f64>, dim: usize) -> Result<Self, DppError> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(DppError::DimensionMismatch {
                expected: dim,
                got: coords.len(),
            });
        }
        Ok(Self {
            coords,
            dim,
            step: None,
            jitter: false,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Grid step, if the nodes are cell midpoints.
    pub fn step(&self) -> Option<f64> {
        self.step
    }

    pub fn jitter(&self) -> bool {
        self.jitter
    }
}

/// Axis-aligned box cut into cubic cells of side `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGrid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub step: f64,
    /// Spread exported coordinates uniformly within their cell.
    pub jitter: bool,
    pub max_nodes: usize,
}

impl BoxGrid {
    pub fn centered(dim: usize, radius: f64, step: f64) -> Self {
        Self {
            lower: vec![-radius; dim],
            upper: vec![radius; dim],
            step,
            jitter: false,
            max_nodes: 20_000,
        }
    }

    pub fn cell_measure(&self) -> f64 {
        self.step.powi(self.lower.len() as i32)
    }

    /// Midpoints `lower + (i + ½) step`; the cell count per axis is
    /// `⌊(upper − lower)/step⌋` up to rounding.
    pub fn nodes(&self) -> Result<GroundSet, DppError> {
        let dim = self.lower.len();
        if dim == 0 || dim != self.upper.len() {
            return Err(DppError::BadGrid("lower and upper corners differ in dimension".into()));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(DppError::BadGrid(format!("step must be positive, got {}", self.step)));
        }
        let mut counts = Vec::with_capacity(dim);
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(DppError::BadGrid(format!("empty or unbounded side [{lo}, {hi}]")));
            }
            let c = ((hi - lo) / self.step + 1e-9).floor() as usize;
            if c == 0 {
                return Err(DppError::BadGrid("step exceeds the box side".into()));
            }
            counts.push(c);
        }
        let needed: u128 = counts.iter().map(|&c| c as u128).product();
        if needed > self.max_nodes as u128 {
            return Err(DppError::NodeBudget {
                needed,
                cap: self.max_nodes,
            });
        }
        let total = needed as usize;
        let mut coords = Vec::with_capacity(total * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            for d in 0..dim {
                coords.push(self.lower[d] + (idx[d] as f64 + 0.5) * self.step);
            }
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < counts[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(GroundSet {
            coords,
            dim,
            step: Some(self.step),
            jitter: self.jitter,
        })
    }
}

/// Weighted kernel matrix on a ground set.
#[derive(Debug, Clone)]
pub struct DiscretizedKernel {
    ground: Arc<GroundSet>,
    weights: Vec<f64>,
    matrix: Mat<c64>,
}

impl DiscretizedKernel {
    /// Evaluates `kernel` on the lower triangle and mirrors it, so the matrix
    /// is exactly Hermitian.
    pub fn from_kernel<K>(ground: GroundSet, weights: Vec<f64>, kernel: &K) -> Result<Self, DppError>
    where
        K: Fn(&[f64], &[f64]) -> c64 + Sync,
    {
        let m = ground.len();
        if weights.len() != m {
            return Err(DppError::DimensionMismatch {
                expected: m,
                got: weights.len(),
            });
        }
        let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let mut matrix = Mat::<c64>::zeros(m, m);
        for j in 0..m {
            for i in j..m {
                let v = kernel(ground.point(i), ground.point(j)) * (sw[i] * sw[j]);
                matrix[(i, j)] = v;
                matrix[(j, i)] = v.conj();
            }
            let d = matrix[(j, j)].re;
            matrix[(j, j)] = c64::new(d, 0.0);
        }
        Ok(Self {
            ground: Arc::new(ground),
            weights,
            matrix,
        })
    }

    /// Wraps a given matrix; Hermiticity is checked by `validate_kernel`.
    pub fn from_matrix(ground: GroundSet, weights: Vec<f64>, matrix: Mat<c64>) -> Result<Self, DppError> {
        let m = ground.len();
        if weights.len() != m || matrix.nrows() != m || matrix.ncols() != m {
            return Err(DppError::DimensionMismatch {
                expected: m,
                got: matrix.nrows(),
            });
        }
        Ok(Self {
            ground: Arc::new(ground),
            weights,
            matrix,
        })
    }

    pub fn ground(&self) -> &Arc<GroundSet> {
        &self.ground
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn matrix(&self) -> &Mat<c64> {
        &self.matrix
    }

    pub fn trace(&self) -> f64 {
        (0..self.matrix.nrows()).map(|i| self.matrix[(i, i)].re).sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let m = self.matrix.nrows();
        let mut worst: f64 = 0.0;
        for j in 0..m {
            for i in j..m {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

/// Midpoint-rule restriction of a continuum kernel to a box, with
/// `w_i = step^d` for every node.
pub fn nystrom_restrict<K>(kernel: &K, grid: &BoxGrid) -> Result<DiscretizedKernel, DppError>
where
    K: Fn(&[f64], &[f64]) -> c64 + Sync,
{
    let ground = grid.nodes()?;
    let weights = vec![grid.cell_measure(); ground.len()];
    DiscretizedKernel::from_kernel(ground, weights, kernel)
}

/// Eigenpairs of a discretised kernel, clipped into `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors, in the order of `eigenvalues`.
    pub vectors: Mat<c64>,
    pub ground: Arc<GroundSet>,
    /// Largest distance of a raw eigenvalue from `[0, 1]`.
    pub max_violation: f64,
    pub clipped: usize,
}

impl SpectralReport {
    pub fn expected_count(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.iter().filter(|&&l| l > 0.5).count()
    }

    /// Eigenvectors with eigenvalue above one half, as a projection frame.
    pub fn projection_basis(&self) -> ProjectionBasis {
        let cols: Vec<usize> = (0..self.eigenvalues.len()).filter(|&j| self.eigenvalues[j] > 0.5).collect();
        ProjectionBasis::from_selected(&self.vectors, &cols, self.ground.clone())
    }
}

fn clip_spectrum(raw: Vec<f64>) -> Result<(Vec<f64>, f64, usize), DppError> {
    let mut max_violation: f64 = 0.0;
    let mut clipped = 0;
    let mut out = Vec::with_capacity(raw.len());
    for l in raw {
        let v = if l < 0.0 {
            -l
        } else if l > 1.0 {
            l - 1.0
        } else {
            0.0
        };
        if v > CLIP_TOLERANCE || !l.is_finite() {
            return Err(DppError::SpectrumOutOfRange(l));
        }
        if v > 0.0 {
            clipped += 1;
        }
        max_violation = max_violation.max(v);
        out.push(l.clamp(0.0, 1.0));
    }
    Ok((out, max_violation, clipped))
}

/// Full eigendecomposition; rejects non-Hermitian matrices and spectra more
/// than `CLIP_TOLERANCE` outside `[0, 1]`.
pub fn validate_kernel(kernel: &DiscretizedKernel) -> Result<SpectralReport, DppError> {
    let scale = (0..kernel.matrix.nrows())
        .map(|i| kernel.matrix[(i, i)].norm())
        .fold(1.0f64, f64::max);
    let asym = kernel.max_asymmetry();
    if asym > 1e-12 * scale {
        return Err(DppError::NotHermitian(asym));
    }
    if kernel.matrix.nrows() == 0 {
        return Ok(SpectralReport {
            eigenvalues: vec![],
            vectors: Mat::zeros(0, 0),
            ground: kernel.ground.clone(),
            max_violation: 0.0,
            clipped: 0,
        });
    }
    let eig = kernel
        .matrix
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| DppError::Eigen(format!("{e:?}")))?;
    let s = eig.S().column_vector();
    let raw: Vec<f64> = (0..s.nrows()).map(|i| s[i].re).collect();
    let (eigenvalues, max_violation, clipped) = clip_spectrum(raw)?;
    Ok(SpectralReport {
        eigenvalues,
        vectors: eig.U().to_owned(),
        ground: kernel.ground.clone(),
        max_violation,
        clipped,
    })
}

/// Eigenpairs of `K̃` without forming it: a pivoted Cholesky factor
/// `K̃ ≈ L L*` (stopped once every residual diagonal is below
/// `tol · max diag`), then the small Gram matrix `L* L`. Eigenvalues below
/// `LOW_RANK_CUTOFF` are dropped.
pub fn low_rank_spectrum<K>(
    ground: GroundSet,
    weights: &[f64],
    kernel: &K,
    tol: f64,
) -> Result<SpectralReport, DppError>
where
    K: Fn(&[f64], &[f64]) -> c64 + Sync,
{
    use rayon::prelude::*;

    let m = ground.len();
    if weights.len() != m {
        return Err(DppError::DimensionMismatch {
            expected: m,
            got: weights.len(),
        });
    }
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let mut diag: Vec<f64> = (0..m)
        .map(|i| kernel(ground.point(i), ground.point(i)).re * weights[i])
        .collect();
    let max_diag = diag.iter().cloned().fold(0.0, f64::max);
    let mut cols: Vec<Vec<c64>> = Vec::new();
    while cols.len() < m {
        let (j, &dj) = diag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty ground set");
        if dj <= tol * max_diag {
            break;
        }
        let xj = ground.point(j);
        let mut col: Vec<c64> = (0..m)
            .into_par_iter()
            .map(|i| kernel(ground.point(i), xj) * (sw[i] * sw[j]))
            .collect();
        for prev in &cols {
            let c = prev[j].conj();
            for (v, p) in col.iter_mut().zip(prev) {
                *v -= p * c;
            }
        }
        let inv = 1.0 / dj.sqrt();
        for (v, d) in col.iter_mut().zip(diag.iter_mut()) {
            *v *= inv;
            *d -= v.norm_sqr();
        }
        diag[j] = 0.0;
        cols.push(col);
    }
    let r = cols.len();
    debug!("pivoted Cholesky: rank {r} on {m} nodes");
    let ground = Arc::new(ground);
    if r == 0 {
        return Ok(SpectralReport {
            eigenvalues: vec![],
            vectors: Mat::zeros(m, 0),
            ground,
            max_violation: 0.0,
            clipped: 0,
        });
    }
    let l = Mat::<c64>::from_fn(m, r, |i, j| cols[j][i]);
    drop(cols);
    let gram = l.adjoint() * &l;
    let eig = gram
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| DppError::Eigen(format!("{e:?}")))?;
    let s = eig.S().column_vector();
    let keep: Vec<usize> = (0..r).filter(|&i| s[i].re > LOW_RANK_CUTOFF).collect();
    let raw: Vec<f64> = keep.iter().map(|&i| s[i].re).collect();
    let (eigenvalues, max_violation, clipped) = clip_spectrum(raw.clone())?;
    let v = eig.U();
    let scaled = Mat::<c64>::from_fn(r, keep.len(), |i, c| v[(i, keep[c])] * (1.0 / raw[c].sqrt()));
    let vectors = &l * &scaled;
    Ok(SpectralReport {
        eigenvalues,
        vectors,
        ground,
        max_violation,
        clipped,
    })
}

/// Orthonormal frame `U` (nodes × rank) of a projection kernel `U U*`,
/// stored row-major for the sampler.
#[derive(Debug, Clone)]
pub struct ProjectionBasis {
    rows: Vec<c64>,
    nodes: usize,
    rank: usize,
    ground: Arc<GroundSet>,
}

impl ProjectionBasis {
    /// Checks `U*U = I` to `1e-10`.
    pub fn from_columns(u: &Mat<c64>, ground: Arc<GroundSet>) -> Result<Self, DppError> {
        if u.nrows() != ground.len() {
            return Err(DppError::DimensionMismatch {
                expected: ground.len(),
                got: u.nrows(),
            });
        }
        let basis = Self::from_selected(u, &(0..u.ncols()).collect::<Vec<_>>(), ground);
        let defect = basis.orthonormality_defect();
        if defect > 1e-10 {
            return Err(DppError::NotOrthonormal(defect));
        }
        Ok(basis)
    }

    fn from_selected(u: &Mat<c64>, cols: &[usize], ground: Arc<GroundSet>) -> Self {
        let m = u.nrows();
        let k = cols.len();
        let mut rows = vec![c64::new(0.0, 0.0); m * k];
        for (c, &j) in cols.iter().enumerate() {
            let col = u.col(j);
            for i in 0..m {
                rows[i * k + c] = col[i];
            }
        }
        Self {
            rows,
            nodes: m,
            rank: k,
            ground,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn ground(&self) -> &Arc<GroundSet> {
        &self.ground
    }

    pub fn row(&self, i: usize) -> &[c64] {
        &self.rows[i * self.rank..(i + 1) * self.rank]
    }

    /// `‖U*U − I‖_max`.
    pub fn orthonormality_defect(&self) -> f64 {
        let k = self.rank;
        let mut worst: f64 = 0.0;
        for a in 0..k {
            for b in a..k {
                let mut s = c64::new(0.0, 0.0);
                for i in 0..self.nodes {
                    let r = self.row(i);
                    s += r[a].conj() * r[b];
                }
                if a == b {
                    s -= 1.0;
                }
                worst = worst.max(s.norm());
            }
        }
        worst
    }

    /// `(U U*)_{ij}`.
    pub fn kernel_entry(&self, i: usize, j: usize) -> c64 {
        self.row(i).iter().zip(self.row(j)).map(|(a, b)| a * b.conj()).sum()
    }
}

/// Chain-rule state: an orthonormal basis of the span of the selected rows.
struct ChainState<'a> {
    basis: &'a ProjectionBasis,
    frame: Vec<Vec<c64>>,
    selected: Vec<usize>,
}

impl<'a> ChainState<'a> {
    fn new(basis: &'a ProjectionBasis) -> Self {
        Self {
            basis,
            frame: Vec::with_capacity(basis.rank),
            selected: Vec::with_capacity(basis.rank),
        }
    }

    /// Row `i` with the selected directions removed (modified Gram–Schmidt).
    fn deflated(&self, i: usize) -> (Vec<c64>, f64) {
        let row = self.basis.row(i);
        let original: f64 = row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut v = row.to_vec();
        self.project_out(&mut v);
        let mut norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm < REORTHOGONALIZE_BELOW * original {
            self.project_out(&mut v);
            norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        }
        (v, norm)
    }

    fn project_out(&self, v: &mut [c64]) {
        for e in &self.frame {
            // ⟨e, v⟩ with rows viewed as vectors in C^k
            let c: c64 = e.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
            for (vi, ei) in v.iter_mut().zip(e) {
                *vi -= c * ei;
            }
        }
    }

    /// `d_i = ‖deflated row_i‖²`; summing to the remaining rank.
    fn residual(&self, i: usize) -> f64 {
        if self.selected.contains(&i) {
            return 0.0;
        }
        let (_, norm) = self.deflated(i);
        norm * norm
    }

    fn remaining(&self) -> usize {
        self.basis.rank - self.selected.len()
    }

    /// Adds node `i`; returns false on numerical rank loss.
    fn select(&mut self, i: usize) -> bool {
        if self.selected.contains(&i) {
            return false;
        }
        let (mut v, norm) = self.deflated(i);
        if norm < RANK_LOSS_NORM {
            return false;
        }
        for z in v.iter_mut() {
            *z /= norm;
        }
        self.frame.push(v);
        self.selected.push(i);
        true
    }
}

/// Probability that the chain rule produces exactly the ordered sequence
/// `seq`: `∏_t d_{i_t}^{(t)} / (N − t)`.
pub fn chain_rule_sequence_probability(basis: &ProjectionBasis, seq: &[usize]) -> f64 {
    if seq.len() != basis.rank {
        return 0.0;
    }
    let mut state = ChainState::new(basis);
    let mut prob = 1.0;
    for &i in seq {
        let rem = state.remaining() as f64;
        prob *= state.residual(i) / rem;
        if !state.select(i) {
            return 0.0;
        }
    }
    prob
}

/// Step distribution `d_i / (N − t)` after the given prefix has been drawn.
pub fn chain_rule_step_probabilities(basis: &ProjectionBasis, prefix: &[usize]) -> Vec<f64> {
    let mut state = ChainState::new(basis);
    for &i in prefix {
        state.select(i);
    }
    let rem = state.remaining().max(1) as f64;
    (0..basis.nodes).map(|i| state.residual(i) / rem).collect()
}

/// One point configuration; `coords` holds `dim` reals per point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSample {
    pub indices: Vec<usize>,
    pub coords: Vec<f64>,
    pub dim: usize,
    pub seed: u64,
}

impl PointSample {
    pub fn new(indices: Vec<usize>, ground: &GroundSet, seed: u64, rng: &mut impl Rng) -> Result<Self, DppError> {
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(DppError::RepeatedIndex(w[0]));
        }
        let dim = ground.dim();
        let mut coords = Vec::with_capacity(indices.len() * dim);
        for &i in &indices {
            coords.extend_from_slice(ground.point(i));
        }
        if let (true, Some(h)) = (ground.jitter(), ground.step()) {
            for c in coords.iter_mut() {
                *c += h * (rng.random::<f64>() - 0.5);
            }
        }
        Ok(Self {
            indices,
            coords,
            dim,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim.max(1))
    }
}

fn draw_projection(basis: &ProjectionBasis, rng: &mut ChaCha8Rng, seed: u64) -> Result<Vec<usize>, DppError> {
    let k = basis.rank;
    if k == 0 {
        return Ok(vec![]);
    }
    let norms: Vec<f64> = (0..basis.nodes)
        .map(|i| basis.row(i).iter().map(|z| z.norm_sqr()).sum())
        .collect();
    let proposal = WeightedIndex::new(&norms).map_err(|_| DppError::NotOrthonormal(f64::NAN))?;
    let mut state = ChainState::new(basis);
    let mut losses = 0;
    while state.selected.len() < k {
        // propose from the initial marginal, accept with d_i / ‖row_i‖²
        let i = proposal.sample(rng);
        if state.selected.contains(&i) {
            continue;
        }
        let accept = if state.selected.is_empty() {
            1.0
        } else {
            state.residual(i) / norms[i]
        };
        if rng.random::<f64>() >= accept {
            continue;
        }
        if !state.select(i) {
            losses += 1;
            warn!("rank loss at node {i} (seed {seed}); redrawing");
            if losses >= MAX_RANK_LOSS_RETRIES {
                return Err(DppError::RankLoss(losses, seed));
            }
            continue;
        }
        losses = 0;
    }
    let out = state.selected;
    if out.len() != k {
        return Err(DppError::Rigidity { got: out.len(), rank: k });
    }
    Ok(out)
}

/// Exact chain-rule sample of the projection DPP with kernel `U U*`.
pub fn sample_projection_dpp(basis: &ProjectionBasis, seed: u64) -> Result<PointSample, DppError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = draw_projection(basis, &mut rng, seed)?;
    PointSample::new(idx, &basis.ground, seed, &mut rng)
}

/// Selects eigenvector `j` with probability `λ_j`, then samples the
/// projection onto the selected ones.
pub fn sample_general_dpp(report: &SpectralReport, seed: u64) -> Result<PointSample, DppError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<usize> = report
        .eigenvalues
        .iter()
        .enumerate()
        .filter_map(|(j, &l)| (rng.random::<f64>() < l).then_some(j))
        .collect();
    let basis = ProjectionBasis::from_selected(&report.vectors, &cols, report.ground.clone());
    let idx = draw_projection(&basis, &mut rng, seed)?;
    PointSample::new(idx, &report.ground, seed, &mut rng)
}

/// Window kernel of a flat model at power `p`, restricted to a box.
///
/// The grid lives in magnetic units `Y = √p Z`, where the kernel is `p`-free;
/// samples are returned in physical coordinates `Z = Y/√p`.
#[derive(Debug, Clone)]
pub struct FlatEnsemble {
    report: SpectralReport,
    p: u32,
}

impl FlatEnsemble {
    pub fn new(kernel: &FlatKernel, p: u32, grid: &BoxGrid) -> Result<Self, DppError> {
        if grid.lower.len() != 2 * kernel.n() {
            return Err(DppError::DimensionMismatch {
                expected: 2 * kernel.n(),
                got: grid.lower.len(),
            });
        }
        let ground = grid.nodes()?;
        let weights = vec![grid.cell_measure(); ground.len()];
        let report = low_rank_spectrum(ground, &weights, &|y: &[f64], yp: &[f64]| kernel.eval(y, yp), 1e-12)?;
        Ok(Self { report, p })
    }

    pub fn report(&self) -> &SpectralReport {
        &self.report
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    /// Physical coordinates of node `i`.
    pub fn physical_point(&self, i: usize) -> Vec<f64> {
        let s = 1.0 / (self.p as f64).sqrt();
        self.report.ground.point(i).iter().map(|y| y * s).collect()
    }

    pub fn sample(&self, seed: u64) -> Result<PointSample, DppError> {
        let mut s = sample_general_dpp(&self.report, seed)?;
        let scale = 1.0 / (self.p as f64).sqrt();
        for c in s.coords.iter_mut() {
            *c *= scale;
        }
        Ok(s)
    }
}

/// `det(K(x_i, x_j))`, the correlation function at distinct points.
/// Values down to `−1e-12` times the diagonal product are clamped to zero.
pub fn correlation_function<K>(kernel: &K, points: &[&[f64]]) -> Result<f64, DppError>
where
    K: Fn(&[f64], &[f64]) -> c64,
{
    let n = points.len();
    if n == 0 {
        return Ok(1.0);
    }
    let m = Mat::<c64>::from_fn(n, n, |i, j| kernel(points[i], points[j]));
    let det = m.determinant().re;
    let scale: f64 = (0..n).map(|i| m[(i, i)].re.abs()).product::<f64>().max(f64::MIN_POSITIVE);
    if det < 0.0 {
        if det >= -1e-12 * scale.max(1.0) {
            return Ok(0.0);
        }
        return Err(DppError::NegativeDeterminant(det));
    }
    Ok(det)
}

/// One row per point: `sample_id,x_1,…,x_d`.
pub fn write_samples_csv<W: Write>(w: &mut W, samples: &[PointSample]) -> io::Result<()> {
    let dim = samples.first().map(|s| s.dim).unwrap_or(0);
    write!(w, "sample_id")?;
    for d in 1..=dim {
        write!(w, ",x_{d}")?;
    }
    writeln!(w)?;
    for (id, s) in samples.iter().enumerate() {
        for p in s.points() {
            write!(w, "{id}")?;
            for x in p {
                write!(w, ",{x:.16e}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// `index,eigenvalue`.
pub fn write_spectrum_csv<W: Write>(w: &mut W, eigenvalues: &[f64]) -> io::Result<()> {
    writeln!(w, "index,eigenvalue")?;
    for (i, l) in eigenvalues.iter().enumerate() {
        writeln!(w, "{i},{l:.16e}")?;
    }
    Ok(())
}
