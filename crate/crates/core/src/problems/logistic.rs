use nalgebra::{DMatrix, DVector};

use super::{FiniteSumProblem, LowerBound, LowerBoundMethod, ProblemError, Smoothness};
use crate::samplers::RngStream;

/// L2-regularized logistic regression with one component per sample:
/// `f_i(x) = log(1 + exp(−y_i z_iᵀx)) + (l2/2)‖x‖²`.
#[derive(Debug, Clone)]
pub struct Logistic {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
    l2: f64,
    lower: LowerBound,
}

/// `log(1 + exp(−m))` without overflow.
#[inline]
fn softplus_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// `1 / (1 + exp(m))`, the derivative weight of `softplus_neg`.
#[inline]
fn sigmoid_neg(m: f64) -> f64 {
    if m > 0.0 {
        let e = (-m).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + m.exp())
    }
}

pub fn make_logistic(
    features: &[Vec<f64>],
    labels: &[f64],
    l2: f64,
) -> Result<Logistic, ProblemError> {
    if features.is_empty() {
        return Err(ProblemError::Config("logistic problem needs samples".into()));
    }
    if features.len() != labels.len() {
        return Err(ProblemError::DimensionMismatch {
            expected: features.len(),
            got: labels.len(),
        });
    }
    if !(l2 >= 0.0) {
        return Err(ProblemError::Config(format!("l2 must be >= 0, got {l2}")));
    }
    if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
        return Err(ProblemError::Config(format!("labels must be ±1, got {bad}")));
    }
    let dim = features[0].len();
    let mut flat = Vec::with_capacity(dim * features.len());
    for row in features {
        if row.len() != dim {
            return Err(ProblemError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        flat.extend_from_slice(row);
    }
    let mut problem = Logistic {
        dim,
        features: flat,
        labels: labels.to_vec(),
        l2,
        lower: LowerBound {
            value: 0.0,
            method: LowerBoundMethod::ComponentMean,
        },
    };
    if l2 > 0.0 {
        problem.lower = problem.certified_lower_bound();
    }
    Ok(problem)
}

/// Gaussian features and labels from a noisy linear rule; deterministic in `seed`.
pub fn synthetic_logistic_data(samples: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = RngStream::new(seed, 0);
    let truth: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
    let mut features = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let z: Vec<f64> = (0..dim).map(|_| rng.standard_normal() / (dim as f64).sqrt()).collect();
        let score = crate::vecops::dot(&z, &truth) + 0.5 * rng.standard_normal();
        labels.push(if score >= 0.0 { 1.0 } else { -1.0 });
        features.push(z);
    }
    (features, labels)
}

impl Logistic {
    fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    fn margin(&self, i: usize, x: &[f64]) -> f64 {
        self.labels[i] * crate::vecops::dot(self.sample(i), x)
    }

    /// Newton's method on the strongly convex objective, then the gap bound
    /// `f* ≥ f(x̂) − ‖∇f(x̂)‖² / (2·l2)`.
    fn certified_lower_bound(&self) -> LowerBound {
        let mut x = vec![0.0; self.dim];
        let mut g = vec![0.0; self.dim];
        for _ in 0..50 {
            self.full_gradient(&x, &mut g);
            if crate::vecops::norm(&g) < 1e-14 {
                break;
            }
            let h = self.dense_hessian(&x).expect("logistic Hessian");
            let Some(step) = h.cholesky().map(|c| c.solve(&DVector::from_column_slice(&g))) else {
                break;
            };
            for k in 0..self.dim {
                x[k] -= step[k];
            }
        }
        self.full_gradient(&x, &mut g);
        LowerBound {
            value: self.value(&x) - crate::vecops::norm_sq(&g) / (2.0 * self.l2),
            method: LowerBoundMethod::Numerical,
        }
    }
}

impl FiniteSumProblem for Logistic {
    fn name(&self) -> &str {
        "logistic"
    }

    fn num_components(&self) -> usize {
        self.labels.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn component_value(&self, i: usize, x: &[f64]) -> f64 {
        softplus_neg(self.margin(i, x)) + 0.5 * self.l2 * crate::vecops::norm_sq(x)
    }

    #[inline]
    fn component_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let weight = -self.labels[i] * sigmoid_neg(self.margin(i, x));
        let z = self.sample(i);
        for k in 0..self.dim {
            out[k] = weight * z[k] + self.l2 * x[k];
        }
    }

    fn dense_hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        let n = self.num_components();
        let mut h = DMatrix::<f64>::identity(self.dim, self.dim) * self.l2;
        for i in 0..n {
            let s = sigmoid_neg(self.margin(i, x));
            let w = s * (1.0 - s) / n as f64;
            let z = self.sample(i);
            for r in 0..self.dim {
                for c in 0..self.dim {
                    h[(r, c)] += w * z[r] * z[c];
                }
            }
        }
        Some(h)
    }

    fn component_lower_bounds(&self) -> Vec<f64> {
        vec![0.0; self.num_components()]
    }

    fn lower_bound(&self) -> LowerBound {
        self.lower
    }

    fn smoothness(&self) -> Smoothness {
        let max_sq = (0..self.num_components())
            .map(|i| crate::vecops::norm_sq(self.sample(i)))
            .fold(0.0, f64::max);
        Smoothness {
            lipschitz_gradient: Some(max_sq / 4.0 + self.l2),
            // |σ''| ≤ 1/(6√3) bounds the third derivative of the loss.
            lipschitz_hessian: Some(max_sq.powf(1.5) / (6.0 * 3f64.sqrt())),
            trust_region_radius: f64::INFINITY,
        }
    }

    fn accuracy(&self, x: &[f64]) -> Option<f64> {
        let n = self.num_components();
        let correct = (0..n).filter(|&i| self.margin(i, x) > 0.0).count();
        Some(correct as f64 / n as f64)
    }
}
