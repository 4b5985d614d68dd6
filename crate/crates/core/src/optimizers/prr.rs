use serde::{Deserialize, Serialize};

use super::{check_start, Engine, EpochMode, OptimError, RunOutcome, TraceOptions};
use crate::problems::FiniteSumProblem;
use crate::samplers::{sample_uniform_ball, RngStream};
use crate::vecops::{distance, norm};

/// Inputs of the perturbed method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrrSchedule {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub r_p: f64,
    pub r_d: f64,
    pub t_e: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrrEventKind {
    /// normal → escaping: stopping test fired, `x_s` recorded, perturbation added.
    Perturbed,
    /// escaping → normal: `‖x_{t+1} − x_s‖ ≥ r_d`.
    Escaped,
    /// escaping → return: `T_e` escaping epochs without leaving the ball.
    Certified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrrEvent {
    pub epoch: u64,
    pub kind: PrrEventKind,
    pub x_s: Vec<f64>,
}

/// Perturbed RR. Normal epochs use `α`; when `‖g_t‖ ≤ ηε` outside an escape
/// phase, the anchor `x_s = x_t` is stored, the next iterate becomes
/// `x_t + p` with `p` uniform in the `r_p`-ball, and up to `T_e` epochs run
/// with `β`. Leaving the `r_d`-ball around `x_s` ends the phase; staying
/// inside for all `T_e` epochs returns `x_s`. `max_epochs` bounds the run;
/// hitting it sets `cap_reached` and returns the current iterate.
pub fn run_prr(
    problem: &dyn FiniteSumProblem,
    x0: &[f64],
    schedule: &PrrSchedule,
    max_epochs: u64,
    rng: &mut RngStream,
    opts: &TraceOptions,
) -> Result<RunOutcome, OptimError> {
    check_start(problem, x0)?;
    let tol = schedule.eta * schedule.epsilon;
    let mut engine = Engine::new(problem);
    let mut x = x0.to_vec();
    let mut x_s = x0.to_vec();
    let mut mu = schedule.alpha;
    // The escape counter: 0 stands for the normal state.
    let mut t_e: u64 = 0;
    let mut events = Vec::new();
    let mut trace = Vec::new();
    for t in 0..max_epochs {
        engine.shuffle(rng);
        engine.x_start.copy_from_slice(&x);
        let step = mu;
        engine.pass(&mut x, step, t)?;
        let recording = opts.records(t);
        if t_e == 0 && norm(&engine.g) <= tol {
            x_s.copy_from_slice(&engine.x_start);
            mu = schedule.beta;
            let p = sample_uniform_ball(rng, x.len(), schedule.r_p)?;
            if recording {
                let mut rec = engine.record(t, &x, step, EpochMode::Perturb, opts);
                rec.perturbation = Some(p.clone());
                trace.push(rec);
            }
            for ((xi, si), pi) in x.iter_mut().zip(&x_s).zip(&p) {
                *xi = si + pi;
            }
            t_e = 1;
            events.push(PrrEvent {
                epoch: t,
                kind: PrrEventKind::Perturbed,
                x_s: x_s.clone(),
            });
        } else {
            let mode = if t_e == 0 { EpochMode::Normal } else { EpochMode::Escaping };
            if recording {
                trace.push(engine.record(t, &x, step, mode, opts));
            }
            if t_e >= 1 && t_e <= schedule.t_e {
                if distance(&x, &x_s) >= schedule.r_d {
                    t_e = 0;
                    mu = schedule.alpha;
                    events.push(PrrEvent {
                        epoch: t,
                        kind: PrrEventKind::Escaped,
                        x_s: x_s.clone(),
                    });
                } else {
                    t_e += 1;
                }
            }
        }
        if t_e == schedule.t_e.saturating_add(1) {
            events.push(PrrEvent {
                epoch: t,
                kind: PrrEventKind::Certified,
                x_s: x_s.clone(),
            });
            return Ok(RunOutcome {
                trace,
                x_final: x_s.clone(),
                x_after: None,
                epochs_run: t + 1,
                tau: Some(t),
                events,
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
        events,
        cap_reached: true,
    })
}
