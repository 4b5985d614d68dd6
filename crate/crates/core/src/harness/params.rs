use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{Algorithm, EscapeProfile, ProblemKind, RunConfig};
use super::HarnessError;
use crate::data_ingest::{load_idx_dataset, make_gaussian_blobs};
use crate::optimizers::{
    average_gradient_bound, compute_alpha_complexity, compute_alpha_sc, compute_prr_params, default_prr_epoch_cap,
    descent_constants, solve_t_sc, DescentConstants, FixedPointCertificate, PrrParams,
};
use crate::problems::{
    compute_variance_constants, make_logistic, make_mean_quadratic, make_quartic_saddle, make_tanh_mlp,
    synthetic_logistic_data, FiniteSumProblem, VarianceConstants,
};

pub fn build_problem(cfg: &RunConfig) -> Result<Arc<dyn FiniteSumProblem>, HarnessError> {
    Ok(match cfg.problem {
        ProblemKind::MeanQuadratic => {
            let anchors = cfg.anchors.clone().unwrap_or_else(|| vec![vec![1.0], vec![-1.0]]);
            Arc::new(make_mean_quadratic(&anchors)?)
        }
        ProblemKind::QuarticSaddle => Arc::new(make_quartic_saddle(cfg.components, cfg.bias_scale, cfg.problem_seed)),
        ProblemKind::Logistic => {
            let (features, labels) = synthetic_logistic_data(cfg.samples, cfg.dim, cfg.problem_seed);
            Arc::new(make_logistic(&features, &labels, cfg.l2)?)
        }
        ProblemKind::MlpBlobs => {
            let feature_dim = *cfg.layers.first().ok_or_else(|| HarnessError::Config("layers is empty".into()))?;
            let data = make_gaussian_blobs(cfg.classes, cfg.per_class, feature_dim, cfg.separation, cfg.problem_seed)?;
            Arc::new(make_tanh_mlp(&cfg.layers, Arc::new(data), cfg.batch, cfg.problem_seed)?)
        }
        ProblemKind::MlpMnist => {
            let (images, labels) = match (&cfg.mnist_images, &cfg.mnist_labels) {
                (Some(i), Some(l)) => (i, l),
                _ => return Err(HarnessError::Config("mlp_mnist needs mnist_images and mnist_labels".into())),
            };
            let data = load_idx_dataset(images, labels, cfg.limit)?;
            Arc::new(make_tanh_mlp(&cfg.layers, Arc::new(data), cfg.batch, cfg.problem_seed)?)
        }
    })
}

/// Every formula-derived quantity for a configuration, with the fixed-point
/// certificates. Values that cannot be formed carry a note instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub n: usize,
    pub d: usize,
    pub variance: Option<VarianceConstants>,
    pub rho: Option<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub eta: f64,
    pub epochs: u64,
    pub alpha_complexity: Option<f64>,
    pub descent: Option<DescentConstants>,
    pub average_gradient_bound: Option<f64>,
    pub t_sc: Option<u64>,
    pub t_sc_certificate: Option<FixedPointCertificate>,
    pub alpha_sc: Option<f64>,
    pub escape: Option<PrrParams>,
    pub escape_profile: EscapeProfile,
    pub prr_epoch_cap: Option<u64>,
    pub notes: Vec<String>,
}

pub(crate) fn resolve_rho(cfg: &RunConfig, problem: &dyn FiniteSumProblem) -> Option<f64> {
    cfg.rho
        .or(problem.smoothness().lipschitz_hessian)
        .filter(|r| *r > 0.0)
}

pub fn derive_params(cfg: &RunConfig, problem: &dyn FiniteSumProblem) -> Result<DerivedParams, HarnessError> {
    let n = problem.num_components();
    let d = problem.dim();
    let mut notes = Vec::new();
    let point = cfg
        .params_x0
        .clone()
        .or_else(|| cfg.x0.clone())
        .unwrap_or_else(|| vec![0.0; d]);
    let variance = match compute_variance_constants(problem, &point) {
        Ok(c) => Some(c),
        Err(e) => {
            notes.push(format!("variance constants unavailable: {e}"));
            None
        }
    };
    let rho = resolve_rho(cfg, problem);
    let mut out = DerivedParams {
        n,
        d,
        variance,
        rho,
        epsilon: cfg.epsilon,
        delta: cfg.delta,
        eta: cfg.eta,
        epochs: cfg.epochs,
        alpha_complexity: None,
        descent: None,
        average_gradient_bound: None,
        t_sc: None,
        t_sc_certificate: None,
        alpha_sc: None,
        escape: None,
        escape_profile: cfg.escape_profile,
        prr_epoch_cap: None,
        notes,
    };
    let Some(c) = variance else { return Ok(out) };
    let (l, a, b, f) = (c.lipschitz, c.a, c.b, c.f_big);
    if cfg.epochs > 0 {
        out.alpha_complexity = Some(compute_alpha_complexity(n, l, a, cfg.epochs, cfg.delta));
        out.descent = Some(descent_constants(n, l, a, b, f, cfg.epochs, cfg.delta));
        out.average_gradient_bound = Some(average_gradient_bound(n, l, a, f, cfg.epochs, cfg.delta));
    }
    match solve_t_sc(n, l, a, f, cfg.eta, cfg.epsilon, cfg.delta) {
        Ok((t_sc, cert)) => {
            out.t_sc = Some(t_sc);
            out.t_sc_certificate = Some(cert);
            out.alpha_sc = Some(compute_alpha_sc(n, l, a, f, cfg.eta, cfg.epsilon, t_sc, cfg.delta));
        }
        Err(e) => out.notes.push(format!("stopping-time bound unavailable: {e}")),
    }
    match rho {
        Some(rho) => match compute_prr_params(n, l, a, b, f, rho, cfg.epsilon, cfg.delta, d) {
            Ok(p) => {
                let p = match cfg.escape_profile {
                    EscapeProfile::Theory => p,
                    EscapeProfile::Desk => p.with_escape_step(1.0 / (4.0 * n as f64 * l), n, rho, cfg.epsilon),
                };
                out.escape = Some(p);
                out.prr_epoch_cap = Some(cfg.epoch_cap.unwrap_or_else(|| default_prr_epoch_cap(n, cfg.epsilon, cfg.delta)));
            }
            Err(e) => out.notes.push(format!("escape parameters unavailable: {e}")),
        },
        None => out.notes.push("no Hessian Lipschitz constant; set rho".into()),
    }
    if cfg.algorithm == Algorithm::Prr && cfg.epoch_cap.is_some() {
        out.prr_epoch_cap = cfg.epoch_cap;
    }
    Ok(out)
}
