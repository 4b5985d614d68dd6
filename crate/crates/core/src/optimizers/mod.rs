//! Random reshuffling and its variants.
//!
//! Each epoch runs the inner loop `x^i = x^{i-1} − μ ∇f_{π^i}(x^{i-1})` and
//! accumulates `g_t = (1/n) Σ ∇f_{π^i}(x^{i-1})`, so `x_t^n = x_t − μ n g_t`.
//! The drivers keep their buffers for the whole run; per-epoch records are
//! materialized only on the epochs selected by [`TraceOptions`].

mod prr;
pub mod schedule;

pub use prr::{run_prr, PrrEvent, PrrEventKind, PrrSchedule};
pub use schedule::{
    average_gradient_bound, compute_alpha_complexity, compute_alpha_sc, compute_prr_params,
    decayed_schedule, default_prr_epoch_cap, descent_constants, escape_complexity_epochs,
    solve_t_sc, DescentConstants, FixedPointCertificate, PrrParams, StepSchedule,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problems::FiniteSumProblem;
use crate::samplers::{permutation_digest, shuffle_in_place, Permutation, RngStream, SamplerError};
use crate::vecops::{all_finite, axpy, norm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient at epoch {epoch}, inner step {step}")]
    Divergence { epoch: u64, step: usize },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("fixed point for {what} did not converge; iterates {iterates:?}")]
    Numeric { what: String, iterates: Vec<f64> },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpochMode {
    Normal,
    /// Epoch whose stopping test fired in p-RR; the next iterate is `x_t + p`.
    Perturb,
    Escaping,
}

impl EpochMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EpochMode::Normal => "normal",
            EpochMode::Perturb => "perturb",
            EpochMode::Escaping => "escaping",
        }
    }
}

/// One outer iteration. `x_end` is the inner-loop output `x_t^n`, which is
/// the next iterate except on a p-RR perturbation epoch, where the next
/// iterate is `x_start + perturbation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub t: u64,
    pub x_start: Vec<f64>,
    pub x_end: Vec<f64>,
    pub g: Vec<f64>,
    /// `g_t − ∇f(x_t)`, when the full gradient was evaluated.
    pub e: Option<Vec<f64>>,
    pub f_start: Option<f64>,
    pub grad_norm_start: Option<f64>,
    pub permutation_digest: u64,
    pub step: f64,
    pub mode: EpochMode,
    pub perturbation: Option<Vec<f64>>,
}

impl EpochRecord {
    pub fn g_norm(&self) -> f64 {
        norm(&self.g)
    }

    pub fn e_norm(&self) -> Option<f64> {
        self.e.as_deref().map(norm)
    }
}

/// Which epochs to materialize and how much to evaluate on them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    /// Record epochs with `t % every == 0`; `None` records nothing.
    pub every: Option<u64>,
    /// Evaluate `f(x_t)`, `∇f(x_t)` and `e_t` on recorded epochs with
    /// `t % full_every == 0`.
    pub full_every: Option<u64>,
}

impl TraceOptions {
    pub const NONE: TraceOptions = TraceOptions {
        every: None,
        full_every: None,
    };

    pub fn every_epoch(full_gradient: bool) -> Self {
        TraceOptions {
            every: Some(1),
            full_every: full_gradient.then_some(1),
        }
    }

    pub fn records(&self, t: u64) -> bool {
        matches!(self.every, Some(k) if k > 0 && t.is_multiple_of(k))
    }

    pub fn evaluates_full(&self, t: u64) -> bool {
        matches!(self.full_every, Some(k) if k > 0 && t.is_multiple_of(k))
    }
}

/// Result of one optimizer run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub trace: Vec<EpochRecord>,
    /// The returned iterate: `x_T` for RR/SGD, `x_τ` for RR-sc, `x_s` for p-RR.
    pub x_final: Vec<f64>,
    /// `x_τ^n` for RR-sc when it stopped.
    pub x_after: Option<Vec<f64>>,
    pub epochs_run: u64,
    pub tau: Option<u64>,
    pub events: Vec<PrrEvent>,
    pub cap_reached: bool,
}

/// Reusable buffers for the allocation-free inner loop.
pub(crate) struct Engine<'a> {
    pub problem: &'a dyn FiniteSumProblem,
    pub order: Vec<usize>,
    pub grad: Vec<f64>,
    pub g: Vec<f64>,
    pub full: Vec<f64>,
    pub x_start: Vec<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(problem: &'a dyn FiniteSumProblem) -> Self {
        let d = problem.dim();
        Engine {
            problem,
            order: (0..problem.num_components()).collect(),
            grad: vec![0.0; d],
            g: vec![0.0; d],
            full: vec![0.0; d],
            x_start: vec![0.0; d],
        }
    }

    /// Runs the inner loop over `self.order`, updating `x` in place and
    /// leaving `g_t` in `self.g`.
    pub fn pass(&mut self, x: &mut [f64], step: f64, epoch: u64) -> Result<(), OptimError> {
        let inv_n = 1.0 / self.order.len() as f64;
        self.g.iter_mut().for_each(|v| *v = 0.0);
        for (i, &idx) in self.order.iter().enumerate() {
            self.problem.component_gradient(idx, x, &mut self.grad);
            if !all_finite(&self.grad) {
                return Err(OptimError::Divergence { epoch, step: i + 1 });
            }
            axpy(-step, &self.grad, x);
            axpy(inv_n, &self.grad, &mut self.g);
        }
        Ok(())
    }

    pub fn shuffle(&mut self, rng: &mut RngStream) {
        shuffle_in_place(rng, &mut self.order);
    }

    pub fn resample(&mut self, rng: &mut RngStream) {
        let n = self.order.len();
        for slot in self.order.iter_mut() {
            *slot = rng.index_inclusive(n - 1);
        }
    }

    /// Builds the record for the epoch that started at `self.x_start`.
    pub fn record(&mut self, t: u64, x_end: &[f64], step: f64, mode: EpochMode, opts: &TraceOptions) -> EpochRecord {
        let (e, f_start, grad_norm_start) = if opts.evaluates_full(t) {
            self.problem.full_gradient(&self.x_start, &mut self.full);
            let e: Vec<f64> = self.g.iter().zip(&self.full).map(|(g, f)| g - f).collect();
            (Some(e), Some(self.problem.value(&self.x_start)), Some(norm(&self.full)))
        } else {
            (None, None, None)
        };
        EpochRecord {
            t,
            x_start: self.x_start.clone(),
            x_end: x_end.to_vec(),
            g: self.g.clone(),
            e,
            f_start,
            grad_norm_start,
            permutation_digest: permutation_digest(&self.order),
            step,
            mode,
            perturbation: None,
        }
    }
}

fn check_start(problem: &dyn FiniteSumProblem, x0: &[f64]) -> Result<(), OptimError> {
    if x0.len() != problem.dim() {
        return Err(OptimError::Parameter(format!(
            "x0 has length {}, problem dimension is {}",
            x0.len(),
            problem.dim()
        )));
    }
    Ok(())
}

/// One RR epoch along a given permutation; always evaluates the full gradient.
pub fn rr_epoch(
    problem: &dyn FiniteSumProblem,
    x: &[f64],
    step: f64,
    permutation: &Permutation,
) -> Result<EpochRecord, OptimError> {
    check_start(problem, x)?;
    if permutation.len() != problem.num_components() {
        return Err(OptimError::Parameter(format!(
            "permutation of {} elements for {} components",
            permutation.len(),
            problem.num_components()
        )));
    }
    let mut engine = Engine::new(problem);
    engine.order.copy_from_slice(permutation.as_slice());
    engine.x_start.copy_from_slice(x);
    let mut x_end = x.to_vec();
    engine.pass(&mut x_end, step, 0)?;
    Ok(engine.record(0, &x_end, step, EpochMode::Normal, &TraceOptions::every_epoch(true)))
}

/// RR for `epochs` epochs with a fresh uniform permutation per epoch.
pub fn run_rr(
    problem: &dyn FiniteSumProblem,
    x0: &[f64],
    schedule: &StepSchedule,
    epochs: u64,
    rng: &mut RngStream,
    opts: &TraceOptions,
) -> Result<RunOutcome, OptimError> {
    run_epochs(problem, x0, schedule, epochs, rng, opts, false)
}

/// SGD baseline: each epoch is `n` independent uniform index draws.
pub fn run_sgd(
    problem: &dyn FiniteSumProblem,
    x0: &[f64],
    schedule: &StepSchedule,
    epochs: u64,
    rng: &mut RngStream,
    opts: &TraceOptions,
) -> Result<RunOutcome, OptimError> {
    run_epochs(problem, x0, schedule, epochs, rng, opts, true)
}

fn run_epochs(
    problem: &dyn FiniteSumProblem,
    x0: &[f64],
    schedule: &StepSchedule,
    epochs: u64,
    rng: &mut RngStream,
    opts: &TraceOptions,
    with_replacement: bool,
) -> Result<RunOutcome, OptimError> {
    check_start(problem, x0)?;
    let mut engine = Engine::new(problem);
    let mut x = x0.to_vec();
    let mut trace = Vec::new();
    for t in 0..epochs {
        if with_replacement {
            engine.resample(rng);
        } else {
            engine.shuffle(rng);
        }
        let step = schedule.step(t);
        let recording = opts.records(t);
        if recording {
            engine.x_start.copy_from_slice(&x);
        }
        engine.pass(&mut x, step, t)?;
        if recording {
            trace.push(engine.record(t, &x, step, EpochMode::Normal, opts));
        }
    }
    Ok(RunOutcome {
        trace,
        x_final: x,
        x_after: None,
        epochs_run: epochs,
        tau: None,
        events: Vec::new(),
        cap_reached: false,
    })
}

/// Per-step SGD with an arbitrary step rule `k ↦ step(k)`, `k = 1, 2, …`.
/// Returns the final iterate.
pub fn sgd_steps(
    problem: &dyn FiniteSumProblem,
    x0: &[f64],
    steps: u64,
    step: impl Fn(u64) -> f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>, OptimError> {
    check_start(problem, x0)?;
    let n = problem.num_components();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; problem.dim()];
    for k in 1..=steps {
        let i = rng.index_inclusive(n - 1);
        problem.component_gradient(i, &x, &mut grad);
        if !all_finite(&grad) {
            return Err(OptimError::Divergence {
                epoch: (k - 1) / n as u64,
                step: ((k - 1) % n as u64) as usize + 1,
            });
        }
        axpy(-step(k), &grad, &mut x);
    }
    Ok(x)
}

/// RR with the stopping test `‖g_t‖ ≤ ηε`, at most `max_epochs` epochs.
/// On stopping at `τ` it returns the epoch start `x_τ` and keeps `x_τ^n`.
#[allow(clippy::too_many_arguments)]
pub fn run_rr_sc(
    problem: &dyn FiniteSumProblem,
    x0: &[f64],
    alpha: f64,
    eta: f64,
    epsilon: f64,
    max_epochs: u64,
    rng: &mut RngStream,
    opts: &TraceOptions,
) -> Result<RunOutcome, OptimError> {
    check_start(problem, x0)?;
    let tol = eta * epsilon;
    let mut engine = Engine::new(problem);
    let mut x = x0.to_vec();
    let mut trace = Vec::new();
    for t in 0..max_epochs {
        engine.shuffle(rng);
        engine.x_start.copy_from_slice(&x);
        engine.pass(&mut x, alpha, t)?;
        let stop = norm(&engine.g) <= tol;
        if stop || opts.records(t) {
            trace.push(engine.record(t, &x, alpha, EpochMode::Normal, opts));
        }
        if stop {
            return Ok(RunOutcome {
                trace,
                x_final: engine.x_start.clone(),
                x_after: Some(x),
                epochs_run: t + 1,
                tau: Some(t),
                events: Vec::new(),
                cap_reached: false,
            });
        }
    }
    Ok(RunOutcome {
        trace,
        x_final: x,
        x_after: None,
        epochs_run: max_epochs,
        tau: None,
        events: Vec::new(),
        cap_reached: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{gradient_of, make_mean_quadratic, make_quartic_saddle};
    use crate::vecops::distance;
    use approx::assert_relative_eq;

    fn two_anchor() -> crate::problems::MeanQuadratic {
        make_mean_quadratic(&[vec![1.0], vec![-1.0]]).unwrap()
    }

    #[test]
    fn hand_unrolled_epoch() {
        let p = two_anchor();
        let r = rr_epoch(&p, &[0.0], 0.1, &Permutation::from_one_based(&[1, 2]).unwrap()).unwrap();
        assert_relative_eq!(r.x_end[0], -0.01, max_relative = 1e-12);
        assert_relative_eq!(r.g[0], 0.05, max_relative = 1e-12);
        assert_relative_eq!(r.e.as_ref().unwrap()[0], 0.05, max_relative = 1e-12);
        let r = rr_epoch(&p, &[0.0], 0.1, &Permutation::from_one_based(&[2, 1]).unwrap()).unwrap();
        assert_relative_eq!(r.x_end[0], 0.01, max_relative = 1e-12);
    }

    #[test]
    fn single_component_is_gradient_descent() {
        let p = make_mean_quadratic(&[vec![0.3, -2.0]]).unwrap();
        let x = [1.0, 1.0];
        let r = rr_epoch(&p, &x, 0.2, &Permutation::identity(1)).unwrap();
        let g = gradient_of(&p, &x);
        assert_eq!(r.g, g);
        assert!(r.e.unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(r.x_end, vec![1.0 - 0.2 * g[0], 1.0 - 0.2 * g[1]]);
    }

    #[test]
    fn zero_epochs_leave_x_unchanged() {
        let p = two_anchor();
        let out = run_rr(&p, &[3.0], &StepSchedule::Constant { step: 0.1 }, 0, &mut RngStream::new(1, 0), &TraceOptions::every_epoch(true)).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.x_final, vec![3.0]);
    }

    #[test]
    fn telescoping_and_error_identities() {
        let p = make_quartic_saddle(5, 0.3, 2);
        let mut rng = RngStream::new(4, 1);
        let out = run_rr(&p, &[0.4, -0.2], &StepSchedule::Constant { step: 0.01 }, 50, &mut rng, &TraceOptions::every_epoch(true)).unwrap();
        for r in &out.trace {
            let predicted: Vec<f64> = r.x_start.iter().zip(&r.g).map(|(x, g)| x - r.step * 5.0 * g).collect();
            assert!(distance(&predicted, &r.x_end) <= 1e-10 * (1.0 + norm(&r.x_end)));
            let full = gradient_of(&p, &r.x_start);
            for ((e, g), f) in r.e.as_ref().unwrap().iter().zip(&r.g).zip(&full) {
                assert!((e - (g - f)).abs() <= 1e-12);
            }
        }
        for w in out.trace.windows(2) {
            assert_eq!(w[0].x_end, w[1].x_start);
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let p = make_quartic_saddle(4, 0.2, 3);
        let run = || {
            run_rr(&p, &[0.1, 0.1], &StepSchedule::Constant { step: 0.02 }, 30, &mut RngStream::new(9, 5), &TraceOptions::every_epoch(true)).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn sgd_with_one_component_matches_rr() {
        let p = make_mean_quadratic(&[vec![2.0]]).unwrap();
        let s = StepSchedule::Constant { step: 0.3 };
        let a = run_rr(&p, &[0.0], &s, 20, &mut RngStream::new(1, 0), &TraceOptions::NONE).unwrap();
        let b = run_sgd(&p, &[0.0], &s, 20, &mut RngStream::new(2, 0), &TraceOptions::NONE).unwrap();
        assert_eq!(a.x_final, b.x_final);
    }

    #[test]
    fn sgd_zero_step_stays_put() {
        let p = two_anchor();
        let out = run_sgd(&p, &[0.7], &StepSchedule::Constant { step: 0.0 }, 10, &mut RngStream::new(1, 0), &TraceOptions::NONE).unwrap();
        assert_eq!(out.x_final, vec![0.7]);
    }

    #[test]
    fn sgd_with_harmonic_steps_reaches_the_anchor_mean() {
        // With step 1/k on f_i = ½‖x − a_i‖², x_k is exactly the running mean of
        // the sampled anchors; it concentrates at the anchor mean.
        let anchors = vec![vec![1.0, 0.0], vec![-1.0, 2.0], vec![0.5, -1.0], vec![2.0, 1.0]];
        let p = make_mean_quadratic(&anchors).unwrap();
        let x = sgd_steps(&p, &[5.0, 5.0], 10_000, |k| 1.0 / k as f64, &mut RngStream::new(6, 0)).unwrap();
        assert!(distance(&x, &[0.625, 0.5]) <= 1e-2 * 3.0, "{x:?}");
        let mut rng = RngStream::new(6, 0);
        let mut sum = [0.0, 0.0];
        for _ in 0..10_000 {
            let i = rng.index_inclusive(3);
            sum[0] += anchors[i][0];
            sum[1] += anchors[i][1];
        }
        assert!(distance(&x, &[sum[0] / 1e4, sum[1] / 1e4]) <= 1e-10);
    }

    #[test]
    fn stopping_at_a_zero_gradient_point() {
        let p = make_quartic_saddle(3, 0.0, 1);
        let out = run_rr_sc(&p, &[1.0, 0.0], 0.01, 0.5, 0.1, 100, &mut RngStream::new(1, 0), &TraceOptions::NONE).unwrap();
        assert_eq!(out.tau, Some(0));
        assert_eq!(out.x_final, vec![1.0, 0.0]);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn stopping_returns_epoch_start() {
        let p = two_anchor();
        let out = run_rr_sc(&p, &[1.0], 0.1, 0.5, 0.2, 1000, &mut RngStream::new(3, 0), &TraceOptions::every_epoch(true)).unwrap();
        let tau = out.tau.unwrap();
        let last = out.trace.last().unwrap();
        assert_eq!(last.t, tau);
        assert_eq!(out.x_final, last.x_start);
        assert_eq!(out.x_after.as_deref(), Some(last.x_end.as_slice()));
        assert!(last.g_norm() <= 0.1);
        assert!(out.trace[..out.trace.len() - 1].iter().all(|r| r.g_norm() > 0.1));
    }

    #[test]
    fn cap_without_stop_has_no_tau() {
        let p = two_anchor();
        let out = run_rr_sc(&p, &[50.0], 1e-4, 0.5, 1e-3, 5, &mut RngStream::new(3, 0), &TraceOptions::NONE).unwrap();
        assert!(out.tau.is_none());
        assert!(out.cap_reached);
        assert_eq!(out.epochs_run, 5);
    }

    #[test]
    fn divergence_is_reported() {
        let p = two_anchor();
        let err = run_rr(&p, &[1.0], &StepSchedule::Constant { step: 1e308 }, 10, &mut RngStream::new(1, 0), &TraceOptions::NONE).unwrap_err();
        assert!(matches!(err, OptimError::Divergence { .. }));
    }
}
