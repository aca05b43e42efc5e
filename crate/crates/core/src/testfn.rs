//! Test functions `f: ℝ^d → ℝ` with analytic gradients.
//!
//! The named bumps are all `C¹` with compact support, which is what the
//! variance asymptotics require. `periodic_cosine` and `constant` have no
//! compact support and are meant for the torus.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TestFunctionError {
    #[error("unknown test function '{0}' (expected gaussian-bump, cosine-bump, tensor-bump, periodic-cosine or constant)")]
    UnknownName(String),
    #[error("test function '{name}' expects {expected} parameters, got {got}")]
    ParamCount {
        name: String,
        expected: String,
        got: usize,
    },
    #[error("invalid parameter for '{name}': {reason}")]
    BadParam { name: String, reason: String },
    #[error("gradient mismatch at {point:?}: analytic {analytic:?}, finite difference {numeric:?}")]
    GradientMismatch {
        point: Vec<f64>,
        analytic: Vec<f64>,
        numeric: Vec<f64>,
    },
}

/// Axis-aligned cube `center ± half_width` containing the support.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportBox {
    pub center: Vec<f64>,
    pub half_width: f64,
}

impl SupportBox {
    pub fn lower(&self) -> Vec<f64> {
        self.center.iter().map(|c| c - self.half_width).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.center.iter().map(|c| c + self.half_width).collect()
    }
}

#[derive(Clone)]
pub struct TestFunction {
    name: String,
    dim: usize,
    support: Option<SupportBox>,
    support_radius: Option<f64>,
    value: ValueFn,
    gradient: GradFn,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("support", &self.support)
            .finish()
    }
}

fn distance_sq(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

impl TestFunction {
    /// Wraps user closures. `support_radius` is the radius of a ball around
    /// `center` outside which `value` must vanish.
    pub fn from_closures(
        name: impl Into<String>,
        dim: usize,
        center: Option<Vec<f64>>,
        support_radius: Option<f64>,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        let support = support_radius.map(|r| SupportBox {
            center: center.clone().unwrap_or_else(|| vec![0.0; dim]),
            half_width: r,
        });
        Self {
            name: name.into(),
            dim,
            support,
            support_radius,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    /// `A [g(r) − g(R)(1 + (R² − r²)/(2σ²))]` for `r < R`, `g(r) = e^{−r²/2σ²}`:
    /// a Gaussian with the first-order Taylor tail subtracted, so value and
    /// gradient both vanish at `r = R`.
    pub fn gaussian_bump(dim: usize, amplitude: f64, sigma: f64, radius: f64, center: Vec<f64>) -> Self {
        let s2 = sigma * sigma;
        let r2max = radius * radius;
        let g_edge = (-r2max / (2.0 * s2)).exp();
        let c1 = center.clone();
        let c2 = center.clone();
        Self::from_closures(
            "gaussian-bump",
            dim,
            Some(center),
            Some(radius),
            move |x| {
                let r2 = distance_sq(x, &c1);
                if r2 >= r2max {
                    return 0.0;
                }
                amplitude * ((-r2 / (2.0 * s2)).exp() - g_edge * (1.0 + (r2max - r2) / (2.0 * s2)))
            },
            move |x, g| {
                let r2 = distance_sq(x, &c2);
                if r2 >= r2max {
                    g.fill(0.0);
                    return;
                }
                let scale = amplitude / s2 * (g_edge - (-r2 / (2.0 * s2)).exp());
                for (gi, (xi, ci)) in g.iter_mut().zip(x.iter().zip(&c2)) {
                    *gi = scale * (xi - ci);
                }
            },
        )
    }

    /// `A cos²(π r / 2R)` for `r < R`.
    pub fn cosine_bump(dim: usize, amplitude: f64, radius: f64, center: Vec<f64>) -> Self {
        let c1 = center.clone();
        let c2 = center.clone();
        let k = PI / (2.0 * radius);
        Self::from_closures(
            "cosine-bump",
            dim,
            Some(center),
            Some(radius),
            move |x| {
                let r = distance_sq(x, &c1).sqrt();
                if r >= radius {
                    return 0.0;
                }
                let c = (k * r).cos();
                amplitude * c * c
            },
            move |x, g| {
                let r = distance_sq(x, &c2).sqrt();
                if r >= radius {
                    g.fill(0.0);
                    return;
                }
                // d/dr = −A k sin(2kr); sin(2kr)/r → 2k as r → 0
                let radial_over_r = if r > 1e-12 {
                    -amplitude * k * (2.0 * k * r).sin() / r
                } else {
                    -2.0 * amplitude * k * k
                };
                for (gi, (xi, ci)) in g.iter_mut().zip(x.iter().zip(&c2)) {
                    *gi = radial_over_r * (xi - ci);
                }
            },
        )
    }

    /// `A ∏_i cos²(π (x_i − c_i) / 2w)` on the cube of half-width `w`.
    pub fn tensor_bump(dim: usize, amplitude: f64, half_width: f64, center: Vec<f64>) -> Self {
        let c1 = center.clone();
        let c2 = center.clone();
        let k = PI / (2.0 * half_width);
        let factor = move |t: f64| {
            if t.abs() >= half_width {
                0.0
            } else {
                let c = (k * t).cos();
                c * c
            }
        };
        let dfactor = move |t: f64| {
            if t.abs() >= half_width {
                0.0
            } else {
                -k * (2.0 * k * t).sin()
            }
        };
        let mut out = Self::from_closures(
            "tensor-bump",
            dim,
            Some(center),
            Some(half_width * (dim as f64).sqrt()),
            move |x| amplitude * x.iter().zip(&c1).map(|(xi, ci)| factor(xi - ci)).product::<f64>(),
            move |x, g| {
                for i in 0..g.len() {
                    let mut prod = amplitude * dfactor(x[i] - c2[i]);
                    for j in 0..g.len() {
                        if j != i {
                            prod *= factor(x[j] - c2[j]);
                        }
                    }
                    g[i] = prod;
                }
            },
        );
        if let Some(s) = out.support.as_mut() {
            s.half_width = half_width;
        }
        out
    }

    /// `A cos(2π ν x_axis) + offset`; smooth and periodic on the unit torus.
    pub fn periodic_cosine(dim: usize, amplitude: f64, offset: f64, axis: usize, frequency: f64) -> Self {
        let w = 2.0 * PI * frequency;
        Self::from_closures(
            "periodic-cosine",
            dim,
            None,
            None,
            move |x| amplitude * (w * x[axis]).cos() + offset,
            move |x, g| {
                g.fill(0.0);
                g[axis] = -amplitude * w * (w * x[axis]).sin();
            },
        )
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::from_closures("constant", dim, None, None, move |_| c, |_, g| g.fill(0.0))
    }

    /// Builds a function from its configuration name and parameter list,
    /// centred at the origin:
    ///
    /// | name              | params                        |
    /// |-------------------|-------------------------------|
    /// | `gaussian-bump`   | amplitude, sigma, radius      |
    /// | `cosine-bump`     | amplitude, radius             |
    /// | `tensor-bump`     | amplitude, half_width         |
    /// | `periodic-cosine` | amplitude, offset [, frequency] |
    /// | `constant`        | value                         |
    pub fn by_name(name: &str, dim: usize, params: &[f64]) -> Result<Self, TestFunctionError> {
        let want = |n: usize| {
            if params.len() == n {
                Ok(())
            } else {
                Err(TestFunctionError::ParamCount {
                    name: name.to_string(),
                    expected: n.to_string(),
                    got: params.len(),
                })
            }
        };
        let positive = |v: f64, what: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(TestFunctionError::BadParam {
                    name: name.to_string(),
                    reason: format!("{what} must be positive, got {v}"),
                })
            }
        };
        let origin = vec![0.0; dim];
        match name {
            "gaussian-bump" => {
                want(3)?;
                let sigma = positive(params[1], "sigma")?;
                let radius = positive(params[2], "radius")?;
                Ok(Self::gaussian_bump(dim, params[0], sigma, radius, origin))
            }
            "cosine-bump" => {
                want(2)?;
                let radius = positive(params[1], "radius")?;
                Ok(Self::cosine_bump(dim, params[0], radius, origin))
            }
            "tensor-bump" => {
                want(2)?;
                let w = positive(params[1], "half_width")?;
                Ok(Self::tensor_bump(dim, params[0], w, origin))
            }
            "periodic-cosine" => {
                let frequency = match params.len() {
                    2 => 1.0,
                    3 => params[2],
                    got => {
                        return Err(TestFunctionError::ParamCount {
                            name: name.to_string(),
                            expected: "2 or 3".into(),
                            got,
                        })
                    }
                };
                Ok(Self::periodic_cosine(dim, params[0], params[1], 0, frequency))
            }
            "constant" => {
                want(1)?;
                Ok(Self::constant(dim, params[0]))
            }
            other => Err(TestFunctionError::UnknownName(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> Option<&SupportBox> {
        self.support.as_ref()
    }

    pub fn support_radius(&self) -> Option<f64> {
        self.support_radius
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        (self.gradient)(x, &mut g);
        g
    }

    pub fn gradient_into(&self, x: &[f64], g: &mut [f64]) {
        (self.gradient)(x, g)
    }

    /// Central differences with step `1e-5`; each component must agree with
    /// the analytic gradient to `1e-6` relative to `max(‖∇f‖_∞, 1)`.
    pub fn check_gradient(&self, points: &[Vec<f64>]) -> Result<(), TestFunctionError> {
        const STEP: f64 = 1e-5;
        const TOL: f64 = 1e-6;
        for p in points {
            let analytic = self.gradient(p);
            let mut numeric = vec![0.0; self.dim];
            let mut x = p.clone();
            for i in 0..self.dim {
                x[i] = p[i] + STEP;
                let up = self.value(&x);
                x[i] = p[i] - STEP;
                let down = self.value(&x);
                x[i] = p[i];
                numeric[i] = (up - down) / (2.0 * STEP);
            }
            let scale = analytic.iter().fold(1.0f64, |m, g| m.max(g.abs()));
            let ok = analytic
                .iter()
                .zip(&numeric)
                .all(|(a, b)| (a - b).abs() <= TOL * scale);
            if !ok {
                return Err(TestFunctionError::GradientMismatch {
                    point: p.clone(),
                    analytic,
                    numeric,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe_points(dim: usize, radius: f64) -> Vec<Vec<f64>> {
        // deterministic interior points, away from the support boundary
        (0..25)
            .map(|i| {
                (0..dim)
                    .map(|d| {
                        let t = ((i * 7 + d * 3) % 17) as f64 / 17.0 - 0.5;
                        0.8 * radius * t
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn named_functions_have_consistent_gradients() {
        for dim in [2, 4] {
            let fs = [
                TestFunction::gaussian_bump(dim, 1.3, 0.6, 1.8, vec![0.0; dim]),
                TestFunction::cosine_bump(dim, 0.7, 1.5, vec![0.0; dim]),
                TestFunction::tensor_bump(dim, 2.0, 1.1, vec![0.0; dim]),
                TestFunction::periodic_cosine(dim, 1.0, 1.2, 0, 1.0),
            ];
            for f in &fs {
                f.check_gradient(&probe_points(dim, 1.1)).unwrap();
            }
        }
    }

    #[test]
    fn bumps_vanish_with_gradient_at_support_edge() {
        let f = TestFunction::gaussian_bump(2, 1.0, 0.5, 1.5, vec![0.0, 0.0]);
        let edge = [1.5 - 1e-9, 0.0];
        assert!(f.value(&edge).abs() < 1e-8);
        assert!(f.gradient(&edge)[0].abs() < 1e-7);
        assert_eq!(f.value(&[2.0, 0.0]), 0.0);

        let f = TestFunction::cosine_bump(2, 1.0, 1.0, vec![0.0, 0.0]);
        assert_eq!(f.value(&[0.0, 0.0]), 1.0);
        assert!(f.gradient(&[1.0 - 1e-9, 0.0])[0].abs() < 1e-7);

        let f = TestFunction::tensor_bump(2, 1.0, 1.0, vec![0.0, 0.0]);
        assert_eq!(f.value(&[1.0, 0.0]), 0.0);
        assert_eq!(f.support().unwrap().half_width, 1.0);
    }

    #[test]
    fn gradient_check_catches_wrong_gradient() {
        let f = TestFunction::from_closures(
            "bad",
            2,
            None,
            None,
            |x| x[0] * x[0],
            |x, g| {
                g[0] = x[0];
                g[1] = 0.0;
            },
        );
        assert!(matches!(
            f.check_gradient(&[vec![1.0, 0.0]]),
            Err(TestFunctionError::GradientMismatch { .. })
        ));
    }

    #[test]
    fn by_name_parses_and_rejects() {
        assert_eq!(TestFunction::by_name("cosine-bump", 2, &[1.0, 2.0]).unwrap().name(), "cosine-bump");
        assert!(matches!(
            TestFunction::by_name("cosine-bump", 2, &[1.0]),
            Err(TestFunctionError::ParamCount { .. })
        ));
        assert!(matches!(
            TestFunction::by_name("tensor-bump", 2, &[1.0, -1.0]),
            Err(TestFunctionError::BadParam { .. })
        ));
        assert!(matches!(
            TestFunction::by_name("sinc", 2, &[]),
            Err(TestFunctionError::UnknownName(_))
        ));
        let f = TestFunction::by_name("periodic-cosine", 2, &[1.0, 1.2]).unwrap();
        assert!((f.value(&[0.25, 0.0]) - 1.2).abs() < 1e-15);
    }
}
