//! Empirical checks of the without-replacement concentration bounds.
//!
//! Monte-Carlo draws are split into fixed chunks, each with its own stream
//! forked from the caller's, so counts are identical for any thread count.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optimizers::EpochRecord;
use crate::problems::{compute_variance_constants, gradient_of, FiniteSumProblem, ProblemError, VarianceConstants};
use crate::samplers::{shuffle_in_place, RngStream};
use crate::stats::{wilson_interval, Z95};
use crate::vecops::{axpy, norm, norm_sq};

/// Largest `n` for which tails are also computed by enumerating all `n!` orders.
pub const ENUMERATION_LIMIT: usize = 8;
const CHUNK: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConcentrationError {
    #[error("vectors are not centered: ‖Σ v_i‖ = {0}")]
    NotCentered(f64),
    #[error("prefix length {m} outside 1..={n}")]
    PrefixLength { m: usize, n: usize },
    #[error("empty family")]
    Empty,
    #[error("ragged family: expected dimension {expected}, got {got}")]
    Ragged { expected: usize, got: usize },
    #[error("step condition 4αnL ≤ 1 fails at epoch {epoch} (4αnL = {value})")]
    StepCondition { epoch: u64, value: f64 },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// `4 d̃ exp(−(s²/2)/(λm/n + bs/3))`, clamped to `[0, 1]`.
pub fn bernstein_bound(s: f64, m: usize, n: usize, b: f64, lambda: f64, d_tilde: f64) -> f64 {
    let denom = lambda * m as f64 / n as f64 + b * s / 3.0;
    let raw = 4.0 * d_tilde * (-(s * s / 2.0) / denom).exp();
    if raw.is_nan() {
        1.0
    } else {
        raw.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub threshold_s: f64,
    pub empirical_tail: f64,
    pub mc_draws: u64,
    pub exact_tail: Option<f64>,
    pub bound_value: f64,
    pub wilson_halfwidth: f64,
}

impl TailEstimate {
    fn new(s: f64, hits: u64, draws: u64, exact: Option<f64>, bound: f64) -> Self {
        let w = wilson_interval(hits, draws, Z95);
        TailEstimate {
            threshold_s: s,
            empirical_tail: w.estimate,
            mc_draws: draws,
            exact_tail: exact,
            bound_value: bound,
            wilson_halfwidth: w.halfwidth,
        }
    }

    /// `|empirical − exact| ≤ halfwidth` (true when no exact value exists).
    pub fn agrees_with_exact(&self) -> bool {
        self.exact_tail
            .is_none_or(|e| (self.empirical_tail - e).abs() <= self.wilson_halfwidth)
    }
}

fn check_family(vectors: &[Vec<f64>], m: usize) -> Result<usize, ConcentrationError> {
    let n = vectors.len();
    if n == 0 {
        return Err(ConcentrationError::Empty);
    }
    let d = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(ConcentrationError::Ragged { expected: d, got: v.len() });
    }
    if m == 0 || m > n {
        return Err(ConcentrationError::PrefixLength { m, n });
    }
    let mut sum = vec![0.0; d];
    for v in vectors {
        axpy(1.0, v, &mut sum);
    }
    let scale: f64 = vectors.iter().map(|v| norm(v)).sum::<f64>().max(1.0);
    if norm(&sum) > 1e-10 * scale {
        return Err(ConcentrationError::NotCentered(norm(&sum)));
    }
    Ok(d)
}

/// Visits every permutation of `0..n` (Heap's algorithm).
fn for_each_permutation(n: usize, mut visit: impl FnMut(&[usize])) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut c = vec![0usize; n];
    visit(&order);
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                order.swap(0, i);
            } else {
                order.swap(c[i], i);
            }
            visit(&order);
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

fn prefix_norm(vectors: &[Vec<f64>], order: &[usize], m: usize, buf: &mut [f64]) -> f64 {
    buf.iter_mut().for_each(|v| *v = 0.0);
    for &i in &order[..m] {
        axpy(1.0, &vectors[i], buf);
    }
    norm(buf)
}

/// Monte-Carlo counts of `‖Σ_{j≤m} v_{π^j}‖ ≥ s` for each `s` in `grid`.
fn monte_carlo_counts(vectors: &[Vec<f64>], m: usize, grid: &[f64], draws: u64, rng: &RngStream) -> Vec<u64> {
    let d = vectors[0].len();
    let chunks = draws.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut stream = rng.fork(c + 1);
            let mut order: Vec<usize> = (0..vectors.len()).collect();
            let mut buf = vec![0.0; d];
            let mut counts = vec![0u64; grid.len()];
            let count = CHUNK.min(draws - c * CHUNK);
            for _ in 0..count {
                shuffle_in_place(&mut stream, &mut order);
                let r = prefix_norm(vectors, &order, m, &mut buf);
                for (k, &s) in grid.iter().enumerate() {
                    if r >= s {
                        counts[k] += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; grid.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

fn exact_tails(vectors: &[Vec<f64>], m: usize, grid: &[f64]) -> Vec<f64> {
    let mut buf = vec![0.0; vectors[0].len()];
    let mut counts = vec![0u64; grid.len()];
    let mut total = 0u64;
    for_each_permutation(vectors.len(), |order| {
        let r = prefix_norm(vectors, order, m, &mut buf);
        for (k, &s) in grid.iter().enumerate() {
            if r >= s {
                counts[k] += 1;
            }
        }
        total += 1;
    });
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Tail sweep for a centered vector family: Monte-Carlo (and exact, for
/// `n ≤ 8`) probabilities against the bound with `b = √λ = √(Σ‖v_i‖²)`, `d̃ = 2`.
pub fn partial_sum_tail_sweep(
    vectors: &[Vec<f64>],
    m: usize,
    grid: &[f64],
    draws: u64,
    rng: &RngStream,
) -> Result<Vec<TailEstimate>, ConcentrationError> {
    check_family(vectors, m)?;
    let n = vectors.len();
    let lambda: f64 = vectors.iter().map(|v| norm_sq(v)).sum();
    let b = lambda.sqrt();
    let counts = monte_carlo_counts(vectors, m, grid, draws, rng);
    let exact = (n <= ENUMERATION_LIMIT).then(|| exact_tails(vectors, m, grid));
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            TailEstimate::new(
                s,
                counts[k],
                draws,
                exact.as_ref().map(|e| e[k]),
                bernstein_bound(s, m, n, b, lambda, 2.0),
            )
        })
        .collect())
}

pub fn empirical_partial_sum_tail(
    vectors: &[Vec<f64>],
    m: usize,
    s: f64,
    draws: u64,
    rng: &RngStream,
) -> Result<TailEstimate, ConcentrationError> {
    Ok(partial_sum_tail_sweep(vectors, m, &[s], draws, rng)?.remove(0))
}

/// `tr(V)/‖V‖_op` for a symmetric positive semidefinite `V`.
pub fn intrinsic_dimension(v: &DMatrix<f64>) -> f64 {
    let eig = v.clone().symmetric_eigenvalues();
    let top = eig.iter().copied().fold(0.0, f64::max);
    v.trace() / top
}

/// Symmetric dilation `[[0, v], [vᵀ, 0]]` of a vector.
pub fn dilation(v: &[f64]) -> DMatrix<f64> {
    let d = v.len();
    let mut x = DMatrix::zeros(d + 1, d + 1);
    for (i, &vi) in v.iter().enumerate() {
        x[(i, d)] = vi;
        x[(d, i)] = vi;
    }
    x
}

fn op_norm(x: &DMatrix<f64>) -> f64 {
    x.clone().symmetric_eigenvalues().amax()
}

/// Tail sweep for a centered family of symmetric matrices, with
/// `b = max ‖X_i‖`, `λ = ‖Σ X_i²‖` and `d̃ = tr(V)/‖V‖`.
pub fn matrix_tail_sweep(
    matrices: &[DMatrix<f64>],
    m: usize,
    grid: &[f64],
    draws: u64,
    rng: &RngStream,
) -> Result<Vec<TailEstimate>, ConcentrationError> {
    let n = matrices.len();
    if n == 0 {
        return Err(ConcentrationError::Empty);
    }
    if m == 0 || m > n {
        return Err(ConcentrationError::PrefixLength { m, n });
    }
    let dim = matrices[0].nrows();
    let sum = matrices.iter().fold(DMatrix::zeros(dim, dim), |acc, x| acc + x);
    if sum.amax() > 1e-10 * matrices.iter().map(|x| x.amax()).sum::<f64>().max(1.0) {
        return Err(ConcentrationError::NotCentered(sum.amax()));
    }
    let v = matrices.iter().fold(DMatrix::zeros(dim, dim), |acc, x| acc + x * x);
    let lambda = op_norm(&v);
    let b = matrices.iter().map(op_norm).fold(0.0, f64::max);
    let d_tilde = intrinsic_dimension(&v);
    let mut stream = rng.fork(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut counts = vec![0u64; grid.len()];
    for _ in 0..draws {
        shuffle_in_place(&mut stream, &mut order);
        let partial = order[..m].iter().fold(DMatrix::zeros(dim, dim), |acc, &i| acc + &matrices[i]);
        let r = op_norm(&partial);
        for (k, &s) in grid.iter().enumerate() {
            if r >= s {
                counts[k] += 1;
            }
        }
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(k, &s)| TailEstimate::new(s, counts[k], draws, None, bernstein_bound(s, m, n, b, lambda, d_tilde)))
        .collect())
}

/// Violation frequency of the prefix bound
/// `‖Σ_{j≤i}(∇f_{π^j}(x) − ∇f(x))‖² ≤ 4n(A(f(x) − f̄) + B) log²(8/δ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixCertificate {
    pub prefix: usize,
    pub delta: f64,
    pub rhs: f64,
    pub violations: u64,
    pub draws: u64,
    pub frequency: f64,
    pub wilson_halfwidth: f64,
}

impl PrefixCertificate {
    /// `frequency ≤ δ + k · halfwidth`.
    pub fn holds(&self, k: f64) -> bool {
        self.frequency <= self.delta + k * self.wilson_halfwidth
    }
}

pub fn gradient_error_certificate(
    problem: &dyn FiniteSumProblem,
    x: &[f64],
    delta: f64,
    draws: u64,
    rng: &RngStream,
) -> Result<Vec<PrefixCertificate>, ConcentrationError> {
    let c = compute_variance_constants(problem, x)?;
    let n = problem.num_components();
    let d = problem.dim();
    let full = gradient_of(problem, x);
    let deviations: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut g = vec![0.0; d];
            problem.component_gradient(i, x, &mut g);
            g.iter().zip(&full).map(|(a, b)| a - b).collect()
        })
        .collect();
    let rhs = 4.0 * n as f64 * c.variance_budget(problem.value(x)) * (8.0 / delta).ln().powi(2);
    let chunks = draws.div_ceil(CHUNK);
    let violations = (0..chunks)
        .into_par_iter()
        .map(|ch| {
            let mut stream = rng.fork(ch + 1);
            let mut order: Vec<usize> = (0..n).collect();
            let mut buf = vec![0.0; d];
            let mut counts = vec![0u64; n];
            for _ in 0..CHUNK.min(draws - ch * CHUNK) {
                shuffle_in_place(&mut stream, &mut order);
                buf.iter_mut().for_each(|v| *v = 0.0);
                for (i, &idx) in order.iter().enumerate() {
                    axpy(1.0, &deviations[idx], &mut buf);
                    if norm_sq(&buf) > rhs {
                        counts[i] += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(violations
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = wilson_interval(v, draws, Z95);
            PrefixCertificate {
                prefix: i + 1,
                delta,
                rhs,
                violations: v,
                draws,
                frequency: w.estimate,
                wilson_halfwidth: w.halfwidth,
            }
        })
        .collect())
}

/// Per-epoch check of
/// `‖e_t‖² ≤ 2α²n²L²‖∇f(x_t)‖² + 32α²nL²(A(f(x_t) − f̄) + B) log²(8n/δ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochErrorReport {
    pub delta: f64,
    pub checked: u64,
    pub skipped: u64,
    pub violations: u64,
    pub rate: f64,
    pub wilson_halfwidth: f64,
    pub per_epoch: Vec<bool>,
}

impl EpochErrorReport {
    /// Pools several reports with the same `δ`.
    pub fn pooled(reports: &[EpochErrorReport], delta: f64) -> EpochErrorReport {
        let checked = reports.iter().map(|r| r.checked).sum();
        let violations = reports.iter().map(|r| r.violations).sum();
        let w = wilson_interval(violations, checked, Z95);
        EpochErrorReport {
            delta,
            checked,
            skipped: reports.iter().map(|r| r.skipped).sum(),
            violations,
            rate: w.estimate,
            wilson_halfwidth: w.halfwidth,
            per_epoch: reports.iter().flat_map(|r| r.per_epoch.iter().copied()).collect(),
        }
    }
}

pub fn epoch_error_bound(c: &VarianceConstants, n: usize, alpha: f64, grad_norm: f64, f: f64, delta: f64) -> f64 {
    let nf = n as f64;
    let l2 = c.lipschitz * c.lipschitz;
    2.0 * alpha * alpha * nf * nf * l2 * grad_norm * grad_norm
        + 32.0 * alpha * alpha * nf * l2 * c.variance_budget(f) * (8.0 * nf / delta).ln().powi(2)
}

/// Records lacking `e_t`, `f(x_t)` or `‖∇f(x_t)‖` are skipped and counted.
pub fn epoch_error_certificate(
    trace: &[EpochRecord],
    constants: &VarianceConstants,
    n: usize,
    delta: f64,
) -> Result<EpochErrorReport, ConcentrationError> {
    let mut per_epoch = Vec::new();
    let mut skipped = 0;
    for r in trace {
        let value = 4.0 * r.step * n as f64 * constants.lipschitz;
        if value > 1.0 + 1e-12 {
            return Err(ConcentrationError::StepCondition { epoch: r.t, value });
        }
        match (r.e_norm(), r.f_start, r.grad_norm_start) {
            (Some(e), Some(f), Some(gn)) => {
                let bound = epoch_error_bound(constants, n, r.step, gn, f, delta);
                per_epoch.push(e * e > bound);
            }
            _ => skipped += 1,
        }
    }
    let violations = per_epoch.iter().filter(|&&v| v).count() as u64;
    let checked = per_epoch.len() as u64;
    let w = wilson_interval(violations, checked, Z95);
    Ok(EpochErrorReport {
        delta,
        checked,
        skipped,
        violations,
        rate: w.estimate,
        wilson_halfwidth: w.halfwidth,
        per_epoch,
    })
}
