//! Laguerre polynomials and the weighted product integrals behind the
//! variance coefficients `α_m` and the quadratic form `|df|²_I`.

use std::collections::HashSet;

use num_rational::Ratio;
use thiserror::Error;

use crate::landau::{LevelSet, MagneticModel, MultiIndex};

/// Upward recurrence stays accurate on `x ≥ 0` well beyond this, but larger
/// degrees overflow the kernel magnitudes used elsewhere.
pub const MAX_LAGUERRE_DEGREE: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LaguerreError {
    #[error("Laguerre degree {degree} exceeds table maximum {max}")]
    DegreeOutOfRange { degree: usize, max: usize },
    #[error("Laguerre argument must be finite and nonnegative, got {0}")]
    NegativeArgument(f64),
    #[error("gradient has length {got}, expected {expected}")]
    GradientLength { expected: usize, got: usize },
    #[error("axis {axis} out of range for dimension {n}")]
    AxisOutOfRange { axis: usize, n: usize },
}

/// `L_k(x)` by the recurrence `(j+1)L_{j+1} = (2j+1−x)L_j − j L_{j−1}`.
pub fn laguerre(k: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if k == 0 {
        return prev;
    }
    let mut cur = 1.0 - x;
    for j in 1..k {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0 - x) * cur - jf * prev) / (jf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Checked evaluator for `L_0 … L_{max_degree}`.
#[derive(Debug, Clone, Copy)]
pub struct LaguerreTable {
    max_degree: usize,
}

impl LaguerreTable {
    pub fn new(max_degree: usize) -> Result<Self, LaguerreError> {
        if max_degree > MAX_LAGUERRE_DEGREE {
            return Err(LaguerreError::DegreeOutOfRange {
                degree: max_degree,
                max: MAX_LAGUERRE_DEGREE,
            });
        }
        Ok(Self { max_degree })
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn eval(&self, k: usize, x: f64) -> Result<f64, LaguerreError> {
        if k > self.max_degree {
            return Err(LaguerreError::DegreeOutOfRange {
                degree: k,
                max: self.max_degree,
            });
        }
        if !(x.is_finite() && x >= 0.0) {
            return Err(LaguerreError::NegativeArgument(x));
        }
        Ok(laguerre(k, x))
    }

    /// `[L_0(x), …, L_max(x)]` in one recurrence pass.
    pub fn eval_all(&self, x: f64) -> Result<Vec<f64>, LaguerreError> {
        if !(x.is_finite() && x >= 0.0) {
            return Err(LaguerreError::NegativeArgument(x));
        }
        let mut out = Vec::with_capacity(self.max_degree + 1);
        out.push(1.0);
        if self.max_degree >= 1 {
            out.push(1.0 - x);
        }
        for j in 1..self.max_degree {
            let jf = j as f64;
            let next = ((2.0 * jf + 1.0 - x) * out[j] - jf * out[j - 1]) / (jf + 1.0);
            out.push(next);
        }
        Ok(out)
    }
}

/// Power of `y` in `∫₀^∞ L_k L_l y^s e^{−y} dy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moment {
    Zero,
    One,
}

/// Closed form of `∫₀^∞ L_k(y) L_l(y) y^s e^{−y} dy` for `s ∈ {0, 1}`.
pub fn weighted_product_integral(k: usize, l: usize, moment: Moment) -> i64 {
    match moment {
        Moment::Zero => i64::from(k == l),
        Moment::One => {
            let k = k as i64;
            let l = l as i64;
            if k == l {
                2 * k + 1
            } else if l == k - 1 {
                -k
            } else if l == k + 1 {
                -(k + 1)
            } else {
                0
            }
        }
    }
}

/// `I_m(k, k')`: the orthogonality integrals on every axis but `axis`, times
/// the first-moment integral on `axis` (0-based).
pub fn i_m(k: &MultiIndex, kp: &MultiIndex, axis: usize) -> i64 {
    debug_assert_eq!(k.len(), kp.len());
    let mut value = 1;
    for (j, (&a, &b)) in k.as_slice().iter().zip(kp.as_slice()).enumerate() {
        let factor = if j == axis {
            weighted_product_integral(a, b, Moment::One)
        } else {
            weighted_product_integral(a, b, Moment::Zero)
        };
        if factor == 0 {
            return 0;
        }
        value *= factor;
    }
    value
}

/// `α_m = Σ_{k', k'' ∈ 𝒦_I} I_m(k', k'')`, summed over the support of `I_m`
/// only: the diagonal and the pairs `(k, k + e_axis)` in both orders.
pub fn alpha_m(levels: &LevelSet, axis: usize) -> Result<i64, LaguerreError> {
    let n = levels.indices().next().map_or(0, MultiIndex::len);
    if axis >= n {
        return Err(LaguerreError::AxisOutOfRange { axis, n });
    }
    let members: HashSet<&MultiIndex> = levels.indices().collect();
    let mut total = 0;
    for k in levels.indices() {
        total += i_m(k, k, axis);
        let up = k.raised(axis);
        if members.contains(&up) {
            total += 2 * i_m(k, &up, axis);
        }
    }
    Ok(total)
}

/// `[α_1, …, α_n]` for a nonempty level set.
pub fn alpha_vector(levels: &LevelSet, n: usize) -> Result<Vec<i64>, LaguerreError> {
    (0..n).map(|m| alpha_m(levels, m)).collect()
}

/// `|df|²_I = Σ_m (α_m / a_m)(g_{2m−1}² + g_{2m}²)`; zero for an empty window.
pub fn df_i_norm_sq(
    model: &MagneticModel,
    levels: &LevelSet,
    grad: &[f64],
) -> Result<f64, LaguerreError> {
    let n = model.n();
    if grad.len() != 2 * n {
        return Err(LaguerreError::GradientLength {
            expected: 2 * n,
            got: grad.len(),
        });
    }
    if levels.is_empty() {
        return Ok(0.0);
    }
    let alphas = alpha_vector(levels, n)?;
    Ok(df_norm_with_alphas(model.a(), &alphas, grad))
}

/// Quadratic form with precomputed `α`; used inside quadrature loops.
pub(crate) fn df_norm_with_alphas(a: &[f64], alphas: &[i64], grad: &[f64]) -> f64 {
    let mut acc = 0.0;
    for m in 0..a.len() {
        let g1 = grad[2 * m];
        let g2 = grad[2 * m + 1];
        acc += alphas[m] as f64 / a[m] * (g1 * g1 + g2 * g2);
    }
    acc
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// `α_m` of the pure window around level `N` (isotropic model):
/// `(2N+n)/n · C(N+n−1, n−1)`.
pub fn poly_pure_alpha(level: usize, n: usize) -> Ratio<i64> {
    assert!(n >= 1, "dimension must be positive");
    let count = binomial((level + n - 1) as u64, (n - 1) as u64) as i64;
    Ratio::new((2 * level + n) as i64, n as i64) * count
}

/// `α_m` of the full window covering levels `0..=N` (isotropic model):
/// `C(N+n, n)`.
pub fn poly_full_alpha(level: usize, n: usize) -> i64 {
    assert!(n >= 1, "dimension must be positive");
    binomial((level + n) as u64, n as u64) as i64
}
