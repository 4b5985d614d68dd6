use nalgebra::DMatrix;

use super::{FiniteSumProblem, LowerBound, LowerBoundMethod, Smoothness};
use crate::samplers::RngStream;

/// Strict-saddle test bed: `f(x, y) = x⁴/4 − x²/2 + y²/2` with zero-sum
/// linear tilts per component, `f_i = f + b_iᵀ(x, y)`.
///
/// The origin is a saddle with Hessian `diag(−1, 1)`; `(±1, 0)` are the
/// minimizers with value `−1/4`. On the ball of radius 2 the component
/// gradients are 11-Lipschitz and the Hessians 12-Lipschitz.
#[derive(Debug, Clone)]
pub struct QuarticSaddle {
    biases: Vec<[f64; 2]>,
}

pub const QUARTIC_TRUST_RADIUS: f64 = 2.0;
pub const QUARTIC_LIPSCHITZ_GRADIENT: f64 = 11.0;
pub const QUARTIC_LIPSCHITZ_HESSIAN: f64 = 12.0;

/// Tilts are Gaussian draws, centered to sum to zero and rescaled so their
/// root-mean-square norm equals `bias_scale` (zero when `n = 1`).
pub fn make_quartic_saddle(n: usize, bias_scale: f64, seed: u64) -> QuarticSaddle {
    assert!(n >= 1, "quartic saddle needs n >= 1");
    let mut rng = RngStream::new(seed, 0);
    let mut biases: Vec<[f64; 2]> = (0..n)
        .map(|_| [rng.standard_normal(), rng.standard_normal()])
        .collect();
    let mean = [
        biases.iter().map(|b| b[0]).sum::<f64>() / n as f64,
        biases.iter().map(|b| b[1]).sum::<f64>() / n as f64,
    ];
    for b in biases.iter_mut() {
        b[0] -= mean[0];
        b[1] -= mean[1];
    }
    let rms = (biases.iter().map(|b| b[0] * b[0] + b[1] * b[1]).sum::<f64>() / n as f64).sqrt();
    let scale = if rms > 0.0 { bias_scale / rms } else { 0.0 };
    for b in biases.iter_mut() {
        b[0] *= scale;
        b[1] *= scale;
    }
    QuarticSaddle { biases }
}

#[inline]
fn mean_value(x: f64, y: f64) -> f64 {
    let x2 = x * x;
    0.25 * x2 * x2 - 0.5 * x2 + 0.5 * y * y
}

/// Global minimum of `x⁴/4 − x²/2 + c·x`. The minimizer is one of the two
/// outermost roots of `x³ − x + c`, reached by Newton from ±2 where the
/// derivative is convex and increasing.
fn tilted_quartic_minimum(c: f64) -> f64 {
    let h = |x: f64| 0.25 * x.powi(4) - 0.5 * x * x + c * x;
    let newton = |mut x: f64| {
        for _ in 0..100 {
            let step = (x * x * x - x + c) / (3.0 * x * x - 1.0);
            x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        x
    };
    let start = 2.0 + c.abs();
    h(newton(start)).min(h(newton(-start)))
}

impl QuarticSaddle {
    pub fn biases(&self) -> &[[f64; 2]] {
        &self.biases
    }
}

impl FiniteSumProblem for QuarticSaddle {
    fn name(&self) -> &str {
        "quartic_saddle"
    }

    fn num_components(&self) -> usize {
        self.biases.len()
    }

    fn dim(&self) -> usize {
        2
    }

    fn component_value(&self, i: usize, x: &[f64]) -> f64 {
        let b = self.biases[i];
        mean_value(x[0], x[1]) + b[0] * x[0] + b[1] * x[1]
    }

    #[inline]
    fn component_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let b = self.biases[i];
        out[0] = x[0] * x[0] * x[0] - x[0] + b[0];
        out[1] = x[1] + b[1];
    }

    fn value(&self, x: &[f64]) -> f64 {
        mean_value(x[0], x[1])
    }

    fn full_gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] * x[0] * x[0] - x[0];
        out[1] = x[1];
    }

    fn dense_hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_row_slice(
            2,
            2,
            &[3.0 * x[0] * x[0] - 1.0, 0.0, 0.0, 1.0],
        ))
    }

    fn component_lower_bounds(&self) -> Vec<f64> {
        self.biases
            .iter()
            .map(|b| tilted_quartic_minimum(b[0]) - 0.5 * b[1] * b[1])
            .collect()
    }

    fn lower_bound(&self) -> LowerBound {
        LowerBound {
            value: -0.25,
            method: LowerBoundMethod::Analytic,
        }
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness {
            lipschitz_gradient: Some(QUARTIC_LIPSCHITZ_GRADIENT),
            lipschitz_hessian: Some(QUARTIC_LIPSCHITZ_HESSIAN),
            trust_region_radius: QUARTIC_TRUST_RADIUS,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::gradient_of;

    #[test]
    fn saddle_and_minimizers() {
        let p = make_quartic_saddle(4, 0.3, 1);
        assert_eq!(gradient_of(&p, &[0.0, 0.0]), vec![0.0, 0.0]);
        let h = p.dense_hessian(&[0.0, 0.0]).unwrap();
        assert_eq!(h.symmetric_eigen().eigenvalues.min(), -1.0);
        assert_eq!(p.value(&[1.0, 0.0]), -0.25);
        assert_eq!(gradient_of(&p, &[1.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn single_unbiased_component_is_the_mean() {
        let p = make_quartic_saddle(1, 0.0, 3);
        let mut gi = [0.0; 2];
        for x in [[0.3, -0.2], [1.7, 0.1], [-0.9, 1.1]] {
            p.component_gradient(0, &x, &mut gi);
            assert_eq!(gi.to_vec(), gradient_of(&p, &x));
        }
    }

    #[test]
    fn tilts_sum_to_zero_with_requested_scale() {
        let p = make_quartic_saddle(6, 0.4, 11);
        let sx: f64 = p.biases().iter().map(|b| b[0]).sum();
        let sy: f64 = p.biases().iter().map(|b| b[1]).sum();
        assert!(sx.abs() < 1e-14 && sy.abs() < 1e-14);
        let rms = (p.biases().iter().map(|b| b[0] * b[0] + b[1] * b[1]).sum::<f64>() / 6.0).sqrt();
        assert!((rms - 0.4).abs() < 1e-14);
    }

    #[test]
    fn tilted_minimum_against_dense_scan() {
        for c in [-0.7, -0.1, 0.0, 0.05, 0.35, 1.2] {
            let scan = (0..=400_000)
                .map(|k| -3.0 + 6.0 * k as f64 / 400_000.0)
                .map(|x| 0.25 * x.powi(4) - 0.5 * x * x + c * x)
                .fold(f64::INFINITY, f64::min);
            let exact = tilted_quartic_minimum(c);
            assert!(exact <= scan + 1e-15);
            assert!(scan - exact < 1e-9, "c = {c}: {scan} vs {exact}");
        }
    }
}
