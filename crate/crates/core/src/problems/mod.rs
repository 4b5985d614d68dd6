//! Finite-sum problems `f(x) = (1/n) Σ f_i(x)` and their smoothness metadata.
//!
//! Every problem is immutable once built, so a single instance can be shared
//! by all trial workers behind an `Arc`.

mod logistic;
mod mlp;
mod quadratic;
mod quartic;

pub use logistic::{make_logistic, synthetic_logistic_data, Logistic};
pub use mlp::{make_tanh_mlp, TanhMlp};
pub use quadratic::{make_mean_quadratic, MeanQuadratic};
pub use quartic::{make_quartic_saddle, QuarticSaddle};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::samplers::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported problem: {0}")]
    Unsupported(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// How a lower bound `f̄` on `f` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LowerBoundMethod {
    /// Closed form.
    Analytic,
    /// Certified from a numerical minimizer (e.g. strong-convexity gap bound).
    Numerical,
    /// Mean of the component lower bounds; always valid and gives `B = 0`.
    ComponentMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub value: f64,
    pub method: LowerBoundMethod,
}

/// Lipschitz certificates, valid on the ball of radius `trust_region_radius`
/// around the origin (infinite for globally smooth problems).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub lipschitz_gradient: Option<f64>,
    pub lipschitz_hessian: Option<f64>,
    pub trust_region_radius: f64,
}

impl Smoothness {
    pub fn contains(&self, x: &[f64]) -> bool {
        crate::vecops::norm(x) <= self.trust_region_radius
    }
}

/// Oracle bundle for a finite-sum objective.
pub trait FiniteSumProblem: Send + Sync {
    /// Short identifier used in reports.
    fn name(&self) -> &str;

    /// Number of components `n`.
    fn num_components(&self) -> usize;

    /// Ambient dimension `d`.
    fn dim(&self) -> usize;

    fn component_value(&self, i: usize, x: &[f64]) -> f64;

    /// Writes `∇f_i(x)` into `out` (overwriting it).
    fn component_gradient(&self, i: usize, x: &[f64], out: &mut [f64]);

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.num_components();
        (0..n).map(|i| self.component_value(i, x)).sum::<f64>() / n as f64
    }

    /// Writes `∇f(x) = (1/n) Σ ∇f_i(x)` into `out`.
    fn full_gradient(&self, x: &[f64], out: &mut [f64]) {
        let n = self.num_components();
        let mut buf = vec![0.0; self.dim()];
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            self.component_gradient(i, x, &mut buf);
            crate::vecops::axpy(1.0, &buf, out);
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|v| *v *= inv);
    }

    fn dense_hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// `f̄_i` for each component.
    fn component_lower_bounds(&self) -> Vec<f64>;

    /// A lower bound `f̄` on `f`; defaults to the mean of the component bounds.
    fn lower_bound(&self) -> LowerBound {
        let bounds = self.component_lower_bounds();
        LowerBound {
            value: bounds.iter().sum::<f64>() / bounds.len() as f64,
            method: LowerBoundMethod::ComponentMean,
        }
    }

    fn smoothness(&self) -> Smoothness;

    /// Fraction of correctly classified samples, for classification problems.
    fn accuracy(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Problem-specific random starting point (e.g. network initialization).
    fn initial_point(&self, _rng: &mut RngStream) -> Option<Vec<f64>> {
        None
    }
}

/// Convenience: allocate and return `∇f(x)`.
pub fn gradient_of(problem: &dyn FiniteSumProblem, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; problem.dim()];
    problem.full_gradient(x, &mut g);
    g
}

/// Constants of the variance-type bound
/// `(1/n) Σ ‖∇f_i(x) − ∇f(x)‖² ≤ A (f(x) − f̄) + B`
/// together with the descent constant `F = 3 (f(x0) − f̄) + 3 B / A`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceConstants {
    pub lipschitz: f64,
    pub a: f64,
    pub b: f64,
    pub f_lower: f64,
    pub f_x0: f64,
    pub f_big: f64,
    pub lower_bound_method: LowerBoundMethod,
}

impl VarianceConstants {
    /// `A (f(x) − f̄) + B` at a point with objective value `fx`.
    pub fn variance_budget(&self, fx: f64) -> f64 {
        self.a * (fx - self.f_lower) + self.b
    }
}

pub fn compute_variance_constants(
    problem: &dyn FiniteSumProblem,
    x0: &[f64],
) -> Result<VarianceConstants, ProblemError> {
    if x0.len() != problem.dim() {
        return Err(ProblemError::DimensionMismatch {
            expected: problem.dim(),
            got: x0.len(),
        });
    }
    let lipschitz = problem.smoothness().lipschitz_gradient.ok_or_else(|| {
        ProblemError::Unsupported(format!(
            "{} does not certify a gradient Lipschitz constant",
            problem.name()
        ))
    })?;
    if lipschitz <= 0.0 {
        return Err(ProblemError::Unsupported(
            "gradient Lipschitz constant must be positive".into(),
        ));
    }
    let a = 2.0 * lipschitz;
    let bound = problem.lower_bound();
    let components = problem.component_lower_bounds();
    let n = components.len() as f64;
    let b = (a / n) * components.iter().map(|fi| bound.value - fi).sum::<f64>();
    // Rounding can leave a tiny negative value when f̄ equals the component mean.
    let b = if b < 0.0 && b > -1e-12 * (1.0 + bound.value.abs()) * a {
        0.0
    } else {
        b
    };
    let f_x0 = problem.value(x0);
    let f_big = 3.0 * (f_x0 - bound.value) + 3.0 * b / a;
    Ok(VarianceConstants {
        lipschitz,
        a,
        b,
        f_lower: bound.value,
        f_x0,
        f_big,
        lower_bound_method: bound.method,
    })
}

/// Central finite differences of component values; test oracle only.
#[cfg(test)]
pub(crate) mod fd {
    use super::FiniteSumProblem;

    pub fn component_gradient(p: &dyn FiniteSumProblem, i: usize, x: &[f64]) -> Vec<f64> {
        let h = 1e-6 * (1.0 + crate::vecops::norm(x));
        (0..x.len())
            .map(|k| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[k] += h;
                xm[k] -= h;
                (p.component_value(i, &xp) - p.component_value(i, &xm)) / (2.0 * h)
            })
            .collect()
    }

    pub fn hessian(p: &dyn FiniteSumProblem, x: &[f64]) -> Vec<Vec<f64>> {
        let h = 1e-5 * (1.0 + crate::vecops::norm(x));
        let d = x.len();
        (0..d)
            .map(|k| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[k] += h;
                xm[k] -= h;
                let gp = super::gradient_of(p, &xp);
                let gm = super::gradient_of(p, &xm);
                (0..d).map(|j| (gp[j] - gm[j]) / (2.0 * h)).collect()
            })
            .collect()
    }

    pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let diff = crate::vecops::distance(a, b);
        diff / (1e-8 + crate::vecops::norm(a).max(crate::vecops::norm(b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::RngStream;
    use crate::vecops::{norm_sq, sub};

    fn random_point(rng: &mut RngStream, d: usize, radius: f64) -> Vec<f64> {
        crate::samplers::sample_uniform_ball(rng, d, radius).unwrap()
    }

    fn test_problems() -> Vec<Box<dyn FiniteSumProblem>> {
        let (features, labels) = synthetic_logistic_data(12, 3, 5);
        vec![
            Box::new(make_mean_quadratic(&[vec![1.0, 0.5], vec![-1.0, 2.0], vec![0.3, -0.7]]).unwrap()),
            Box::new(make_quartic_saddle(5, 0.2, 9)),
            Box::new(make_logistic(&features, &labels, 0.05).unwrap()),
        ]
    }

    #[test]
    fn full_gradient_is_component_mean() {
        let mut rng = RngStream::new(1, 0);
        for p in test_problems() {
            let x = random_point(&mut rng, p.dim(), 1.5);
            let g = gradient_of(p.as_ref(), &x);
            let mut mean = vec![0.0; p.dim()];
            let mut buf = vec![0.0; p.dim()];
            for i in 0..p.num_components() {
                p.component_gradient(i, &x, &mut buf);
                for k in 0..p.dim() {
                    mean[k] += buf[k] / p.num_components() as f64;
                }
            }
            for k in 0..p.dim() {
                assert!((g[k] - mean[k]).abs() <= 1e-12 * (1.0 + mean[k].abs()));
            }
        }
    }

    #[test]
    fn component_gradients_match_finite_differences() {
        let mut rng = RngStream::new(2, 0);
        for p in test_problems() {
            let radius = p.smoothness().trust_region_radius.min(2.0);
            for _ in 0..100 {
                let i = rng.index_inclusive(p.num_components() - 1);
                let x = random_point(&mut rng, p.dim(), radius);
                let mut g = vec![0.0; p.dim()];
                p.component_gradient(i, &x, &mut g);
                let fd = fd::component_gradient(p.as_ref(), i, &x);
                let err = fd::relative_error(&g, &fd);
                assert!(err <= 1e-5, "{}: relative error {err}", p.name());
            }
        }
    }

    #[test]
    fn gradient_lipschitz_spot_check() {
        let mut rng = RngStream::new(3, 0);
        for p in test_problems() {
            let s = p.smoothness();
            let l = s.lipschitz_gradient.unwrap();
            let radius = s.trust_region_radius.min(2.0);
            let (mut gx, mut gy) = (vec![0.0; p.dim()], vec![0.0; p.dim()]);
            for _ in 0..200 {
                let i = rng.index_inclusive(p.num_components() - 1);
                let x = random_point(&mut rng, p.dim(), radius);
                let y = random_point(&mut rng, p.dim(), radius);
                p.component_gradient(i, &x, &mut gx);
                p.component_gradient(i, &y, &mut gy);
                let lhs = norm_sq(&sub(&gx, &gy)).sqrt();
                let rhs = l * norm_sq(&sub(&x, &y)).sqrt();
                assert!(lhs <= rhs + 1e-12, "{}: {lhs} > {rhs}", p.name());
            }
        }
    }

    #[test]
    fn components_respect_lower_bounds() {
        let mut rng = RngStream::new(4, 0);
        for p in test_problems() {
            let bounds = p.component_lower_bounds();
            for _ in 0..200 {
                let x = random_point(&mut rng, p.dim(), 3.0);
                for (i, fb) in bounds.iter().enumerate() {
                    assert!(p.component_value(i, &x) >= fb - 1e-12);
                }
            }
        }
    }

    #[test]
    fn variance_bound_holds_in_trust_region() {
        let mut rng = RngStream::new(5, 0);
        for p in test_problems() {
            let c = compute_variance_constants(p.as_ref(), &vec![0.0; p.dim()]).unwrap();
            let radius = p.smoothness().trust_region_radius.min(2.0);
            let mut buf = vec![0.0; p.dim()];
            for _ in 0..100 {
                let x = random_point(&mut rng, p.dim(), radius);
                let g = gradient_of(p.as_ref(), &x);
                let mut lhs = 0.0;
                for i in 0..p.num_components() {
                    p.component_gradient(i, &x, &mut buf);
                    lhs += norm_sq(&sub(&buf, &g));
                }
                lhs /= p.num_components() as f64;
                let rhs = c.variance_budget(p.value(&x));
                assert!(lhs <= rhs + 1e-9, "{}: {lhs} > {rhs}", p.name());
            }
        }
    }

    #[test]
    fn hessians_match_finite_differences_and_are_symmetric() {
        let mut rng = RngStream::new(6, 0);
        for p in test_problems() {
            for _ in 0..20 {
                let x = random_point(&mut rng, p.dim(), 1.5);
                let h = p.dense_hessian(&x).unwrap();
                let fd = fd::hessian(p.as_ref(), &x);
                for r in 0..p.dim() {
                    for c in 0..p.dim() {
                        assert!((h[(r, c)] - h[(c, r)]).abs() <= 1e-12);
                        assert!((h[(r, c)] - fd[r][c]).abs() <= 1e-4, "{}", p.name());
                    }
                }
            }
        }
    }

    #[test]
    fn variance_constants_two_anchor_quadratic() {
        let p = make_mean_quadratic(&[vec![1.0], vec![-1.0]]).unwrap();
        let c = compute_variance_constants(&p, &[0.0]).unwrap();
        assert_eq!(c.a, 2.0);
        assert!((c.b - 1.0).abs() < 1e-15);
        assert!((c.f_lower - 0.5).abs() < 1e-15);
        assert!((c.f_big - 1.5).abs() < 1e-15);
        assert!(c.f_big >= 3.0 * c.b / c.a);
    }

    #[test]
    fn variance_constants_degenerate_at_minimizer() {
        // All components identical: every f̄_i equals f̄, so B = 0; x0 optimal gives F = 0.
        let p = make_quartic_saddle(3, 0.0, 1);
        let c = compute_variance_constants(&p, &[1.0, 0.0]).unwrap();
        assert!(c.b.abs() < 1e-12);
        assert!(c.f_big.abs() < 1e-12);
    }

    #[test]
    fn variance_constants_quartic_with_grid_lower_bound() {
        let p = make_quartic_saddle(4, 0.1, 7);
        let x0 = [0.5, 0.5];
        let c = compute_variance_constants(&p, &x0).unwrap();
        // Brute-force grid scan of f over [-2, 2]^2 as the f̄ oracle.
        let mut grid_min = f64::INFINITY;
        let steps = 801;
        for a in 0..steps {
            for b in 0..steps {
                let x = -2.0 + 4.0 * a as f64 / (steps - 1) as f64;
                let y = -2.0 + 4.0 * b as f64 / (steps - 1) as f64;
                grid_min = grid_min.min(p.value(&[x, y]));
            }
        }
        assert!((grid_min - c.f_lower).abs() < 1e-4, "{grid_min} vs {}", c.f_lower);
        assert!(c.f_lower <= grid_min);
        let bounds = p.component_lower_bounds();
        let b = (c.a / 4.0) * bounds.iter().map(|fi| c.f_lower - fi).sum::<f64>();
        assert!((c.b - b).abs() < 1e-15);
        let f_big = 3.0 * (p.value(&x0) - c.f_lower) + 3.0 * c.b / c.a;
        assert!((c.f_big - f_big).abs() < 1e-15);
        assert_eq!(c.a, 22.0);
    }

    #[test]
    fn missing_lipschitz_is_unsupported() {
        let data = crate::data_ingest::make_gaussian_blobs(2, 4, 3, 1.0, 1).unwrap();
        let p = make_tanh_mlp(&[3, 4, 2], std::sync::Arc::new(data), 2, 0).unwrap();
        let x0 = vec![0.0; p.dim()];
        assert!(matches!(
            compute_variance_constants(&p, &x0),
            Err(ProblemError::Unsupported(_))
        ));
    }
}
