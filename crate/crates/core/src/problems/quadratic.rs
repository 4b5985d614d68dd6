use nalgebra::DMatrix;

use super::{FiniteSumProblem, LowerBound, LowerBoundMethod, ProblemError, Smoothness};

/// `f_i(x) = ‖x − a_i‖² / 2`; `f` is minimized at the anchor mean.
#[derive(Debug, Clone)]
pub struct MeanQuadratic {
    dim: usize,
    anchors: Vec<f64>,
    mean: Vec<f64>,
}

pub fn make_mean_quadratic(anchors: &[Vec<f64>]) -> Result<MeanQuadratic, ProblemError> {
    let first = anchors
        .first()
        .ok_or_else(|| ProblemError::Config("mean quadratic needs at least one anchor".into()))?;
    let dim = first.len();
    if dim == 0 {
        return Err(ProblemError::Config("anchors must have dimension >= 1".into()));
    }
    let mut flat = Vec::with_capacity(dim * anchors.len());
    for a in anchors {
        if a.len() != dim {
            return Err(ProblemError::DimensionMismatch {
                expected: dim,
                got: a.len(),
            });
        }
        flat.extend_from_slice(a);
    }
    let n = anchors.len() as f64;
    let mean = (0..dim)
        .map(|k| anchors.iter().map(|a| a[k]).sum::<f64>() / n)
        .collect();
    Ok(MeanQuadratic {
        dim,
        anchors: flat,
        mean,
    })
}

impl MeanQuadratic {
    pub fn anchor(&self, i: usize) -> &[f64] {
        &self.anchors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.mean
    }
}

impl FiniteSumProblem for MeanQuadratic {
    fn name(&self) -> &str {
        "mean_quadratic"
    }

    fn num_components(&self) -> usize {
        self.anchors.len() / self.dim
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn component_value(&self, i: usize, x: &[f64]) -> f64 {
        0.5 * crate::vecops::distance(x, self.anchor(i)).powi(2)
    }

    #[inline]
    fn component_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let a = self.anchor(i);
        for k in 0..self.dim {
            out[k] = x[k] - a[k];
        }
    }

    fn full_gradient(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.dim {
            out[k] = x[k] - self.mean[k];
        }
    }

    fn dense_hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(DMatrix::identity(self.dim, self.dim))
    }

    fn component_lower_bounds(&self) -> Vec<f64> {
        vec![0.0; self.num_components()]
    }

    fn lower_bound(&self) -> LowerBound {
        let n = self.num_components();
        let spread: f64 = (0..n)
            .map(|i| crate::vecops::distance(self.anchor(i), &self.mean).powi(2))
            .sum();
        LowerBound {
            value: 0.5 * spread / n as f64,
            method: LowerBoundMethod::Analytic,
        }
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness {
            lipschitz_gradient: Some(1.0),
            lipschitz_hessian: Some(0.0),
            trust_region_radius: f64::INFINITY,
        }
    }
}
