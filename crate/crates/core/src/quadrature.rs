//! Gauss rules and composite tensor-product cubature on boxes.

use faer::{Mat, Side};
use rayon::prelude::*;
use thiserror::Error;

use crate::laguerre::laguerre;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature did not converge: estimate {estimate:e}, last relative change {change:e} (tolerance {tolerance:e})")]
    NonConvergence {
        estimate: f64,
        change: f64,
        tolerance: f64,
    },
    #[error("cubature would need {needed} nodes, budget is {budget}")]
    NodeBudget { needed: u128, budget: u128 },
    #[error("degenerate integration box: lower {lower:?}, upper {upper:?}")]
    BadBox { lower: Vec<f64>, upper: Vec<f64> },
    #[error("Gauss rule construction failed: {0}")]
    Rule(String),
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Laguerre rule for `∫₀^∞ g(y) e^{−y} dy`.
///
/// Nodes start from the Jacobi-matrix eigenvalues and are polished by Newton
/// steps on `L_n`; weights use `x_i / ((n+1) L_{n+1}(x_i))²`, which keeps
/// full relative accuracy in the tail.
pub fn gauss_laguerre(order: usize) -> Result<(Vec<f64>, Vec<f64>), QuadratureError> {
    if order == 0 {
        return Err(QuadratureError::Rule("order must be positive".into()));
    }
    let n = order;
    let jacobi = Mat::<f64>::from_fn(n, n, |i, j| {
        if i == j {
            (2 * i + 1) as f64
        } else if i == j + 1 {
            i as f64
        } else if j == i + 1 {
            j as f64
        } else {
            0.0
        }
    });
    let mut nodes = jacobi
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| QuadratureError::Rule(format!("{e:?}")))?;
    let nf = n as f64;
    for x in nodes.iter_mut() {
        for _ in 0..50 {
            let ln = laguerre(n, *x);
            let ln1 = laguerre(n - 1, *x);
            let deriv = nf * (ln - ln1) / *x;
            let dx = ln / deriv;
            *x -= dx;
            if dx.abs() <= 4.0 * f64::EPSILON * x.abs() {
                break;
            }
        }
    }
    let weights = nodes
        .iter()
        .map(|&x| {
            let l = laguerre(n + 1, x) * (nf + 1.0);
            x / (l * l)
        })
        .collect();
    Ok((nodes, weights))
}

/// Pairwise (cascade) summation; the reduction order depends only on length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Composite Gauss–Legendre rule on `[lo, hi]` with `panels` equal panels.
pub fn composite_rule(lo: f64, hi: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(order);
    let width = (hi - lo) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let a = lo + width * p as f64;
        for (xi, wi) in x.iter().zip(&w) {
            nodes.push(a + 0.5 * width * (xi + 1.0));
            weights.push(0.5 * width * wi);
        }
    }
    (nodes, weights)
}

/// Tensor product of one-dimensional rules.
#[derive(Debug, Clone)]
pub struct TensorRule {
    axes: Vec<(Vec<f64>, Vec<f64>)>,
}

impl TensorRule {
    pub fn new(axes: Vec<(Vec<f64>, Vec<f64>)>) -> Self {
        Self { axes }
    }

    pub fn composite_box(lower: &[f64], upper: &[f64], panels: usize, order: usize) -> Self {
        Self::new(
            lower
                .iter()
                .zip(upper)
                .map(|(&a, &b)| composite_rule(a, b, panels, order))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn node_count(&self) -> u128 {
        self.axes.iter().map(|(x, _)| x.len() as u128).product()
    }

    /// Σ w f(x) over the grid. The outermost axis is split across workers;
    /// partial sums are reduced in index order.
    pub fn integrate<F>(&self, f: &F) -> f64
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let d = self.dim();
        if d == 0 {
            return f(&[]);
        }
        let (x0, w0) = &self.axes[0];
        let partial: Vec<f64> = x0
            .par_iter()
            .zip(w0.par_iter())
            .map(|(&x, &w)| {
                let mut point = vec![0.0; d];
                point[0] = x;
                w * self.inner(1, &mut point, f)
            })
            .collect();
        pairwise_sum(&partial)
    }

    fn inner<F>(&self, axis: usize, point: &mut [f64], f: &F) -> f64
    where
        F: Fn(&[f64]) -> f64,
    {
        if axis == self.dim() {
            return f(point);
        }
        let (xs, ws) = &self.axes[axis];
        let mut terms = Vec::with_capacity(xs.len());
        for (&x, &w) in xs.iter().zip(ws) {
            point[axis] = x;
            terms.push(w * self.inner(axis + 1, point, f));
        }
        pairwise_sum(&terms)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CubatureOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub order: usize,
    pub initial_panels: usize,
    pub max_refinements: usize,
    pub max_nodes: u128,
}

impl Default for CubatureOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-14,
            order: 6,
            initial_panels: 4,
            max_refinements: 6,
            max_nodes: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubatureResult {
    pub value: f64,
    pub change: f64,
    pub nodes: u128,
}

/// Composite Gauss–Legendre on a box, doubling the panel count per axis until
/// successive estimates agree to `rel_tol` (or `abs_tol`).
pub fn integrate_box<F>(
    f: &F,
    lower: &[f64],
    upper: &[f64],
    opts: &CubatureOptions,
) -> Result<CubatureResult, QuadratureError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if lower.len() != upper.len() || lower.iter().zip(upper).any(|(a, b)| !(a < b)) {
        return Err(QuadratureError::BadBox {
            lower: lower.to_vec(),
            upper: upper.to_vec(),
        });
    }
    let mut panels = opts.initial_panels.max(1);
    let mut previous = TensorRule::composite_box(lower, upper, panels, opts.order).integrate(f);
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_refinements {
        panels *= 2;
        let rule = TensorRule::composite_box(lower, upper, panels, opts.order);
        let needed = rule.node_count();
        if needed > opts.max_nodes {
            return Err(QuadratureError::NodeBudget {
                needed,
                budget: opts.max_nodes,
            });
        }
        let current = rule.integrate(f);
        let diff = (current - previous).abs();
        change = diff / current.abs().max(f64::MIN_POSITIVE);
        if diff <= opts.abs_tol || change <= opts.rel_tol {
            return Ok(CubatureResult {
                value: current,
                change,
                nodes: needed,
            });
        }
        previous = current;
    }
    Err(QuadratureError::NonConvergence {
        estimate: previous,
        change,
        tolerance: opts.rel_tol,
    })
}
