//! Canned verification runs shared by the CLI and the acceptance suite.

use serde::Serialize;

use super::config::{Algorithm, EscapeProfile, ProblemKind, RunConfig};
use super::params::build_problem;
use super::run::{run_experiment, Aggregate};
use super::HarnessError;
use crate::concentration::{gradient_error_certificate, partial_sum_tail_sweep, PrefixCertificate, TailEstimate};
use crate::optimizers::{run_rr, StepSchedule, TraceOptions};
use crate::problems::{make_mean_quadratic, make_quartic_saddle, FiniteSumProblem};
use crate::samplers::RngStream;
use crate::stats::Frequency;

/// `{±e₁, ±e₂}`: centered, four members in the plane.
pub fn cross_family() -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]
}

/// Twenty thresholds `0.25, 0.5, …, 5`.
pub fn tail_grid() -> Vec<f64> {
    (1..=20).map(|k| 0.25 * k as f64).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TailCheck {
    pub prefix: usize,
    pub tails: Vec<TailEstimate>,
    /// Exact tails never exceed the bound.
    pub dominated: bool,
    /// Monte-Carlo tails lie within one Wilson half-width of the exact ones.
    pub agrees: bool,
}

pub fn tail_check(draws: u64, seed: u64) -> Result<TailCheck, HarnessError> {
    let prefix = 2;
    let tails = partial_sum_tail_sweep(&cross_family(), prefix, &tail_grid(), draws, &RngStream::new(seed, 0))?;
    Ok(TailCheck {
        prefix,
        dominated: tails.iter().all(|t| t.exact_tail.is_some_and(|e| e <= t.bound_value)),
        agrees: tails.iter().all(|t| t.agrees_with_exact()),
        tails,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateCheck {
    pub problem: String,
    pub probe: Vec<f64>,
    pub delta: f64,
    pub certificates: Vec<PrefixCertificate>,
    /// Every prefix has violation frequency within δ + 3 half-widths.
    pub holds: bool,
}

/// A named problem with the points at which it is probed.
pub type ProbedProblem = (String, Box<dyn FiniteSumProblem>, Vec<Vec<f64>>);

pub fn certificate_problems() -> Vec<ProbedProblem> {
    let quadratic = make_mean_quadratic(&[vec![1.0], vec![-1.0]]).expect("two anchors");
    vec![
        ("mean_quadratic".into(), Box::new(quadratic), vec![vec![0.0], vec![0.5], vec![2.0]]),
        (
            "quartic_saddle".into(),
            Box::new(make_quartic_saddle(6, 0.5, 1)),
            vec![vec![0.0, 0.0], vec![0.5, 0.3], vec![1.0, -0.2]],
        ),
    ]
}

pub fn certificate_checks(deltas: &[f64], draws: u64, seed: u64) -> Result<Vec<CertificateCheck>, HarnessError> {
    let mut out = Vec::new();
    let mut stream = 0;
    for (name, problem, probes) in certificate_problems() {
        for probe in probes {
            for &delta in deltas {
                let certificates =
                    gradient_error_certificate(problem.as_ref(), &probe, delta, draws, &RngStream::new(seed, stream))?;
                stream += 1;
                out.push(CertificateCheck {
                    problem: name.clone(),
                    probe: probe.clone(),
                    delta,
                    holds: certificates.iter().all(|c| c.holds(3.0)),
                    certificates,
                });
            }
        }
    }
    Ok(out)
}

/// Quartic saddle with identical components, started exactly at the saddle.
pub fn escape_demo_config(trials: u64, seed: u64) -> RunConfig {
    RunConfig {
        problem: ProblemKind::QuarticSaddle,
        algorithm: Algorithm::Prr,
        components: 2,
        bias_scale: 0.0,
        x0: Some(vec![0.0, 0.0]),
        epsilon: 0.01,
        delta: 0.1,
        eta: 0.5,
        rho: Some(12.0),
        escape_profile: EscapeProfile::Desk,
        record_every: 0,
        trials,
        base_seed: seed,
        ..Default::default()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeDemo {
    pub control_epochs: u64,
    /// Plain RR from the saddle never moved.
    pub control_stays_put: bool,
    pub success: Frequency,
    pub aggregate: Aggregate,
}

pub fn escape_demo(cfg: &RunConfig, control_epochs: u64) -> Result<EscapeDemo, HarnessError> {
    let problem = build_problem(cfg)?;
    let x0 = cfg.x0.clone().unwrap_or_else(|| vec![0.0; problem.dim()]);
    let aggregate = run_experiment(cfg)?.aggregate;
    let step = aggregate.certificates.parameters.alpha_sc.unwrap_or(0.0);
    let control = run_rr(
        problem.as_ref(),
        &x0,
        &StepSchedule::Constant { step },
        control_epochs,
        &mut RngStream::new(cfg.base_seed, u64::MAX),
        &TraceOptions { every: Some(1), full_every: None },
    )?;
    let control_stays_put = control.x_final == x0 && control.trace.iter().all(|r| r.x_end == x0);
    let success = aggregate
        .frequency("escape_success")
        .cloned()
        .unwrap_or_else(|| Frequency::new("escape_success", 0, cfg.trials));
    Ok(EscapeDemo { control_epochs, control_stays_put, success, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_tails_are_a_step_function() {
        let check = tail_check(1000, 0).unwrap();
        assert!(check.dominated);
        // Two distinct members cancel with probability 1/3, else have norm √2.
        for t in &check.tails {
            let expected = if t.threshold_s <= 2f64.sqrt() { 2.0 / 3.0 } else { 0.0 };
            assert!((t.exact_tail.unwrap() - expected).abs() < 1e-15, "s = {}", t.threshold_s);
        }
    }

    #[test]
    fn certificate_grid_covers_all_probes() {
        let checks = certificate_checks(&[0.1], 200, 0).unwrap();
        assert_eq!(checks.len(), 6);
    }

    #[test]
    fn demo_config_validates() {
        escape_demo_config(50, 0).validate().unwrap();
    }
}
