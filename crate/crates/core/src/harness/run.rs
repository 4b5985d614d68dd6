use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Algorithm, RunConfig, ScheduleKind};
use super::params::{build_problem, derive_params, resolve_rho, DerivedParams};
use super::{worker_count, HarnessError};
use crate::concentration::{epoch_error_certificate, EpochErrorReport};
use crate::optimizers::{
    decayed_schedule, run_prr, run_rr, run_rr_sc, run_sgd, EpochMode, EpochRecord, PrrEventKind, PrrSchedule,
    RunOutcome, StepSchedule, TraceOptions,
};
use crate::problems::{gradient_of, FiniteSumProblem};
use crate::samplers::RngStream;
use crate::stationarity::{classify, Classification, StationarityReport};
use crate::stats::{quantiles, Frequency, Quantiles};
use crate::vecops::norm;

pub const SCHEMA_VERSION: u32 = 1;

/// Salt for the initial-point stream, kept apart from the sampling stream.
const INIT_SALT: u64 = 0x1417;

/// One per-epoch line of the CSV trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub trial: u64,
    pub epoch: u64,
    pub f: Option<f64>,
    pub grad_norm: Option<f64>,
    pub g_norm: f64,
    pub e_norm: Option<f64>,
    pub step: f64,
    pub mode: EpochMode,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u64,
    pub seed: u64,
    pub tau: Option<u64>,
    pub stopped: bool,
    /// `‖∇f‖` at the returned iterate (`x_τ` when stopped).
    pub grad_norm_last: Option<f64>,
    pub f_last: Option<f64>,
    pub accuracy_last: Option<f64>,
    pub epochs_run: u64,
    pub escape_events: u64,
    pub perturbations: u64,
    pub cap_flag: bool,
    /// Some iterate left the ball on which `L` and `ρ` are certified.
    pub left_trust_region: bool,
    pub stationarity: Option<StationarityReport>,
    pub error: Option<String>,
    /// High-probability events evaluated on this trial; absent when the trace
    /// lacks the data to decide.
    pub events: BTreeMap<String, bool>,
    pub trace_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSet {
    pub grad_norm_last: Option<Quantiles>,
    pub f_last: Option<Quantiles>,
    pub accuracy_last: Option<Quantiles>,
    pub epochs_run: Option<Quantiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    pub parameters: DerivedParams,
    /// Pooled epoch-error check over all trials; `per_epoch` is omitted.
    pub epoch_error: Option<EpochErrorReport>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub schema_version: u32,
    pub config: serde_json::Value,
    pub trials: Vec<TrialResult>,
    pub quantiles: QuantileSet,
    pub frequencies: Vec<Frequency>,
    pub certificates: Certificates,
}

impl Aggregate {
    pub fn frequency(&self, event: &str) -> Option<&Frequency> {
        self.frequencies.iter().find(|f| f.event == event)
    }

    /// Byte-stable pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("aggregate serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub aggregate: Aggregate,
    /// Per-epoch rows of all trials, sorted by trial then epoch.
    pub rows: Vec<TraceRow>,
}

enum Plan {
    Epochs { schedule: StepSchedule, sgd: bool },
    Stopping { alpha: f64, max_epochs: u64 },
    Escape { schedule: PrrSchedule, max_epochs: u64 },
}

fn plan(cfg: &RunConfig, params: &DerivedParams) -> Result<Plan, HarnessError> {
    let missing = |what: &str| {
        let why = params.notes.join("; ");
        HarnessError::Config(format!("{what} cannot be derived for this problem: {why}"))
    };
    Ok(match cfg.algorithm {
        Algorithm::Rr | Algorithm::Sgd => {
            let schedule = match cfg.schedule {
                ScheduleKind::Formula => match (params.alpha_complexity, cfg.epochs) {
                    (Some(step), _) => StepSchedule::Constant { step },
                    (None, 0) => StepSchedule::Constant { step: 0.0 },
                    (None, _) => return Err(missing("the complexity step size")),
                },
                ScheduleKind::Constant => StepSchedule::Constant { step: cfg.step.unwrap_or(0.0) },
                ScheduleKind::Decayed => decayed_schedule(cfg.initial_step.unwrap_or(0.0), cfg.decay.unwrap_or(1.0))?,
            };
            Plan::Epochs { schedule, sgd: cfg.algorithm == Algorithm::Sgd }
        }
        Algorithm::RrSc => {
            let alpha = params.alpha_sc.ok_or_else(|| missing("the stopping step size"))?;
            let t_sc = params.t_sc.ok_or_else(|| missing("the stopping-time bound"))?;
            Plan::Stopping { alpha, max_epochs: cfg.epoch_cap.unwrap_or(t_sc) }
        }
        Algorithm::Prr => {
            let alpha = params.alpha_sc.ok_or_else(|| missing("the stopping step size"))?;
            let p = params.escape.as_ref().ok_or_else(|| missing("the escape parameters"))?;
            let schedule = PrrSchedule {
                alpha,
                beta: p.beta,
                eta: cfg.eta,
                epsilon: cfg.epsilon,
                r_p: p.r_p,
                r_d: p.r_d,
                t_e: p.t_e,
            };
            Plan::Escape { schedule, max_epochs: params.prr_epoch_cap.unwrap_or(0) }
        }
    })
}

fn trace_options(cfg: &RunConfig, problem: &dyn FiniteSumProblem) -> TraceOptions {
    let size = problem.dim() as u64 * problem.num_components() as u64;
    let full_every = if size <= cfg.full_gradient_threshold { cfg.record_every } else { cfg.full_gradient_every };
    TraceOptions {
        every: (cfg.record_every > 0).then_some(cfg.record_every),
        full_every: (full_every > 0).then_some(full_every),
    }
}

pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    let params = derive_params(cfg, problem.as_ref())?;
    let plan = plan(cfg, &params)?;
    let opts = trace_options(cfg, problem.as_ref());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(cfg.parallelism))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<(TrialResult, Vec<TraceRow>, Option<EpochErrorReport>)> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|k| run_trial(cfg, &problem, &params, &plan, &opts, k))
            .collect()
    });

    let mut trials = Vec::with_capacity(outcomes.len());
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut unchecked = 0;
    for (trial, mut r, report) in outcomes {
        rows.append(&mut r);
        match report {
            Some(rep) => reports.push(rep),
            None if params.variance.is_some() && trial.error.is_none() && cfg.algorithm != Algorithm::Prr => {
                unchecked += 1
            }
            None => {}
        }
        trials.push(trial);
    }
    let mut notes = Vec::new();
    if unchecked > 0 {
        notes.push(format!("epoch-error check not applicable on {unchecked} trials"));
    }
    let epoch_error = (!reports.is_empty()).then(|| {
        let mut pooled = EpochErrorReport::pooled(&reports, cfg.certificate_delta);
        pooled.per_epoch.clear();
        pooled
    });

    let aggregate = Aggregate {
        schema_version: SCHEMA_VERSION,
        config: cfg.echo(),
        quantiles: quantile_set(&trials),
        frequencies: frequencies(&trials),
        trials,
        certificates: Certificates { parameters: params, epoch_error, notes },
    };
    Ok(ExperimentOutput { aggregate, rows })
}

fn quantile_set(trials: &[TrialResult]) -> QuantileSet {
    let collect = |f: &dyn Fn(&TrialResult) -> Option<f64>| quantiles(&trials.iter().filter_map(f).collect::<Vec<_>>());
    QuantileSet {
        grad_norm_last: collect(&|t| t.grad_norm_last),
        f_last: collect(&|t| t.f_last),
        accuracy_last: collect(&|t| t.accuracy_last),
        epochs_run: collect(&|t| Some(t.epochs_run as f64)),
    }
}

fn frequencies(trials: &[TrialResult]) -> Vec<Frequency> {
    let mut counts: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
    for t in trials {
        for (event, &ok) in &t.events {
            let c = counts.entry(event.as_str()).or_default();
            c.0 += ok as u64;
            c.1 += 1;
        }
    }
    counts.into_iter().map(|(e, (s, n))| Frequency::new(e, s, n)).collect()
}

fn initial_point(cfg: &RunConfig, problem: &dyn FiniteSumProblem, rng: &RngStream) -> Vec<f64> {
    if let Some(x0) = &cfg.x0 {
        return x0.clone();
    }
    problem
        .initial_point(&mut rng.fork(INIT_SALT))
        .unwrap_or_else(|| vec![0.0; problem.dim()])
}

fn run_trial(
    cfg: &RunConfig,
    problem: &Arc<dyn FiniteSumProblem>,
    params: &DerivedParams,
    plan: &Plan,
    opts: &TraceOptions,
    k: u64,
) -> (TrialResult, Vec<TraceRow>, Option<EpochErrorReport>) {
    let p = problem.as_ref();
    let mut rng = RngStream::new(cfg.base_seed, k);
    let x0 = initial_point(cfg, p, &rng);
    let outcome = match plan {
        Plan::Epochs { schedule, sgd: false } => run_rr(p, &x0, schedule, cfg.epochs, &mut rng, opts),
        Plan::Epochs { schedule, sgd: true } => run_sgd(p, &x0, schedule, cfg.epochs, &mut rng, opts),
        Plan::Stopping { alpha, max_epochs } => {
            run_rr_sc(p, &x0, *alpha, cfg.eta, cfg.epsilon, *max_epochs, &mut rng, opts)
        }
        Plan::Escape { schedule, max_epochs } => run_prr(p, &x0, schedule, *max_epochs, &mut rng, opts),
    };
    let mut result = TrialResult {
        trial: k,
        seed: cfg.base_seed,
        tau: None,
        stopped: false,
        grad_norm_last: None,
        f_last: None,
        accuracy_last: None,
        epochs_run: 0,
        escape_events: 0,
        perturbations: 0,
        cap_flag: false,
        left_trust_region: false,
        stationarity: None,
        error: None,
        events: BTreeMap::new(),
        trace_len: 0,
    };
    let out = match outcome {
        Ok(o) => o,
        Err(e) => {
            result.error = Some(e.to_string());
            return (result, Vec::new(), None);
        }
    };
    result.tau = out.tau;
    result.stopped = out.tau.is_some();
    result.epochs_run = out.epochs_run;
    result.cap_flag = out.cap_reached;
    result.escape_events = out.events.iter().filter(|e| e.kind == PrrEventKind::Escaped).count() as u64;
    result.perturbations = out.events.iter().filter(|e| e.kind == PrrEventKind::Perturbed).count() as u64;
    result.trace_len = out.trace.len();
    let region = p.smoothness();
    result.left_trust_region = !region.contains(&out.x_final)
        || out.trace.iter().any(|r| !region.contains(&r.x_start) || !region.contains(&r.x_end));

    let grad = gradient_of(p, &out.x_final);
    let gn = norm(&grad);
    let f = p.value(&out.x_final);
    if gn.is_finite() && f.is_finite() {
        result.grad_norm_last = Some(gn);
        result.f_last = Some(f);
    } else {
        result.error = Some("non-finite value at the returned iterate".into());
    }
    result.accuracy_last = p.accuracy(&out.x_final);
    if let Some(rho) = resolve_rho(cfg, p) {
        if let Ok(report) = classify(p, &out.x_final, cfg.epsilon, rho) {
            if report.classification != Classification::HessianUnavailable {
                result.stationarity = Some(report);
            }
        }
    }
    evaluate_events(cfg, params, &out, p.num_components(), &mut result);

    let report = match (&params.variance, cfg.algorithm) {
        (Some(c), Algorithm::Rr | Algorithm::Sgd | Algorithm::RrSc) if !out.trace.is_empty() => {
            epoch_error_certificate(&out.trace, c, p.num_components(), cfg.certificate_delta).ok()
        }
        _ => None,
    };
    let rows = out.trace.iter().map(|r| trace_row(k, r, p)).collect();
    (result, rows, report)
}

fn trace_row(trial: u64, r: &EpochRecord, p: &dyn FiniteSumProblem) -> TraceRow {
    TraceRow {
        trial,
        epoch: r.t,
        f: r.f_start,
        grad_norm: r.grad_norm_start,
        g_norm: r.g_norm(),
        e_norm: r.e_norm(),
        step: r.step,
        mode: r.mode,
        accuracy: r.f_start.and_then(|_| p.accuracy(&r.x_start)),
    }
}

/// Full-gradient norms `‖∇f(x_t)‖` for `t = 0, 1, …` when every one of them
/// up to `upto` was recorded.
fn contiguous_grad_norms(trace: &[EpochRecord], upto: u64) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(upto as usize);
    for (t, r) in trace.iter().take(upto as usize).enumerate() {
        if r.t != t as u64 {
            return None;
        }
        out.push(r.grad_norm_start?);
    }
    (out.len() as u64 == upto).then_some(out)
}

fn evaluate_events(cfg: &RunConfig, params: &DerivedParams, out: &RunOutcome, n: usize, result: &mut TrialResult) {
    let ev = &mut result.events;
    match cfg.algorithm {
        Algorithm::Rr if cfg.schedule == ScheduleKind::Formula && cfg.epochs > 0 => {
            if let (Some(bound), Some(norms)) =
                (params.average_gradient_bound, contiguous_grad_norms(&out.trace, cfg.epochs))
            {
                let avg = norms.iter().map(|g| g * g).sum::<f64>() / cfg.epochs as f64;
                ev.insert("average_gradient_bound".into(), avg <= bound);
            }
        }
        Algorithm::RrSc => {
            let t_sc = params.t_sc.unwrap_or(0);
            let within = out.tau.is_some_and(|tau| tau < t_sc);
            let small = result.grad_norm_last.is_some_and(|g| g <= cfg.epsilon);
            ev.insert("stopped_within_t_sc".into(), within);
            ev.insert("last_iterate_within_epsilon".into(), result.stopped && small);
            ev.insert("stopped_and_last_iterate_within_epsilon".into(), within && small);
            let horizon = out.tau.unwrap_or(out.epochs_run);
            if let Some(norms) = contiguous_grad_norms(&out.trace, horizon) {
                ev.insert("no_false_negative".into(), norms.iter().all(|&g| g > cfg.epsilon));
            }
            if let Some(ok) = strict_descent(cfg, out, n, horizon) {
                ev.insert("strict_descent".into(), ok);
            }
        }
        Algorithm::Prr => {
            let certified = out.events.last().is_some_and(|e| e.kind == PrrEventKind::Certified);
            let sosp = result
                .stationarity
                .as_ref()
                .is_some_and(|s| s.classification == Classification::SecondOrderStationary);
            ev.insert("perturbed".into(), result.perturbations > 0);
            ev.insert("escaped".into(), result.escape_events > 0);
            ev.insert("certified".into(), certified && !out.cap_reached);
            ev.insert(
                "escape_success".into(),
                result.escape_events > 0 && certified && !out.cap_reached && sosp,
            );
        }
        _ => {}
    }
}

/// `f(x_{t+1}) ≤ f(x_t) − (αn/4)(ηε)²` for every `t < horizon`.
fn strict_descent(cfg: &RunConfig, out: &RunOutcome, n: usize, horizon: u64) -> Option<bool> {
    if horizon == 0 {
        return None;
    }
    let mut fs = Vec::with_capacity(horizon as usize + 1);
    for (t, r) in out.trace.iter().take(horizon as usize + 1).enumerate() {
        if r.t != t as u64 {
            return None;
        }
        fs.push(r.f_start?);
    }
    if (fs.len() as u64) < horizon + 1 {
        return None;
    }
    let tol = (cfg.eta * cfg.epsilon).powi(2);
    Some(
        out.trace
            .iter()
            .zip(fs.windows(2))
            .all(|(r, w)| w[1] <= w[0] - r.step * n as f64 / 4.0 * tol),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ProblemKind;

    fn quadratic(algorithm: Algorithm) -> RunConfig {
        RunConfig { algorithm, trials: 6, rho: Some(1.0), x0: Some(vec![2.0]), ..Default::default() }
    }

    #[test]
    fn zero_epochs_reports_the_start() {
        let cfg = RunConfig { trials: 1, epochs: 0, x0: Some(vec![2.0]), ..Default::default() };
        let out = run_experiment(&cfg).unwrap();
        let t = &out.aggregate.trials[0];
        assert_eq!(t.epochs_run, 0);
        assert_eq!(t.grad_norm_last, Some(2.0));
        assert_eq!(t.f_last, Some(2.5));
        assert!(out.rows.is_empty());
    }

    #[test]
    fn parallelism_does_not_change_output() {
        let mut cfg = quadratic(Algorithm::Rr);
        cfg.parallelism = 1;
        let a = run_experiment(&cfg).unwrap().aggregate.to_json();
        cfg.parallelism = 3;
        let b = run_experiment(&cfg).unwrap().aggregate.to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn echoed_config_reproduces_the_report() {
        let cfg = quadratic(Algorithm::RrSc);
        let first = run_experiment(&cfg).unwrap().aggregate;
        let again = RunConfig::from_json_str(&first.config.to_string()).unwrap();
        assert_eq!(run_experiment(&again).unwrap().aggregate.to_json(), first.to_json());
    }

    #[test]
    fn stopping_runs_report_their_events() {
        let out = run_experiment(&quadratic(Algorithm::RrSc)).unwrap();
        let agg = &out.aggregate;
        for t in &agg.trials {
            assert!(t.stopped);
            assert_eq!(t.escape_events, 0);
            assert_eq!(t.trace_len as u64, t.epochs_run);
        }
        for e in ["stopped_within_t_sc", "last_iterate_within_epsilon", "no_false_negative", "strict_descent"] {
            assert_eq!(agg.frequency(e).unwrap().trials, 6, "{e}");
        }
        assert!(agg.certificates.epoch_error.is_some());
    }

    #[test]
    fn rr_rows_are_sorted() {
        let out = run_experiment(&quadratic(Algorithm::Rr)).unwrap();
        assert_eq!(out.aggregate.frequency("average_gradient_bound").unwrap().trials, 6);
        assert_eq!(out.rows.len(), 600);
        assert!(out.rows.windows(2).all(|w| (w[0].trial, w[0].epoch) < (w[1].trial, w[1].epoch)));
    }

    #[test]
    fn divergence_is_recorded_per_trial() {
        let cfg = RunConfig {
            schedule: ScheduleKind::Constant,
            step: Some(1e300),
            trials: 2,
            epochs: 5,
            x0: Some(vec![1e10]),
            ..Default::default()
        };
        let out = run_experiment(&cfg).unwrap();
        assert!(out.aggregate.trials.iter().all(|t| t.error.is_some()));
    }

    #[test]
    fn formula_needs_constants() {
        let cfg = RunConfig {
            problem: ProblemKind::MlpBlobs,
            layers: vec![2, 3, 2],
            classes: 2,
            per_class: 4,
            trials: 1,
            epochs: 1,
            ..Default::default()
        };
        assert!(matches!(run_experiment(&cfg), Err(HarnessError::Config(_))));
    }
}
