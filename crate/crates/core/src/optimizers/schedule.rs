//! Step-size and parameter calculators. Logarithms are natural throughout.

use serde::{Deserialize, Serialize};

use super::OptimError;

const FIXED_POINT_CAP: usize = 100;

/// Per-epoch step rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant { step: f64 },
    Decayed { initial: f64, factor: f64 },
}

impl StepSchedule {
    pub fn step(&self, epoch: u64) -> f64 {
        match *self {
            StepSchedule::Constant { step } => step,
            StepSchedule::Decayed { initial, factor } => initial * factor.powf(epoch as f64),
        }
    }
}

/// `step(t) = initial · factor^t`.
pub fn decayed_schedule(initial: f64, factor: f64) -> Result<StepSchedule, OptimError> {
    if !(initial > 0.0) || !(factor > 0.0 && factor <= 1.0) {
        return Err(OptimError::Parameter(format!(
            "decayed schedule needs initial > 0 and factor in (0, 1], got {initial}, {factor}"
        )));
    }
    Ok(StepSchedule::Decayed { initial, factor })
}

/// `min{1/(4nL), (C1 n² T)^(-1/3)}` with `C1 = 32 L² A log²(8nT/δ)`.
pub fn compute_alpha_complexity(n: usize, l: f64, a: f64, t: u64, delta: f64) -> f64 {
    let nf = n as f64;
    let c1 = 32.0 * l * l * a * (8.0 * nf * t as f64 / delta).ln().powi(2);
    let second = (c1 * nf * nf * t as f64).powf(-1.0 / 3.0);
    (1.0 / (4.0 * nf * l)).min(second)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConstants {
    pub c1: f64,
    pub c2: f64,
    pub g: f64,
}

/// `C1 = 32L²A log²(8nT/δ)`, `C2 = 32L²B log²(8nT/δ)`, `G = C1·F + C2`.
pub fn descent_constants(n: usize, l: f64, a: f64, b: f64, f_big: f64, t: u64, delta: f64) -> DescentConstants {
    let log2 = (8.0 * n as f64 * t as f64 / delta).ln().powi(2);
    let c1 = 32.0 * l * l * a * log2;
    let c2 = 32.0 * l * l * b * log2;
    DescentConstants { c1, c2, g: c1 * f_big + c2 }
}

/// Upper bound on `(1/T) Σ_{t<T} ‖∇f(x_t)‖²` for RR with the complexity step.
pub fn average_gradient_bound(n: usize, l: f64, a: f64, f_big: f64, t: u64, delta: f64) -> f64 {
    let (nf, tf) = (n as f64, t as f64);
    let first = 45.0 * l * f_big / tf;
    let second = 35.0 * l.powf(2.0 / 3.0) * a.cbrt() * f_big * (8.0 * nf * tf / delta).ln().powf(2.0 / 3.0)
        / (nf.cbrt() * tf.powf(2.0 / 3.0));
    first.max(second)
}

/// Stopping-criterion step `min{1/(4nL), ηε/(8√(nAF) L log(8nT_sc/δ))}`.
/// With `F = 0` the second branch is infinite and the first is returned.
#[allow(clippy::too_many_arguments)]
pub fn compute_alpha_sc(
    n: usize,
    l: f64,
    a: f64,
    f_big: f64,
    eta: f64,
    epsilon: f64,
    t_sc: u64,
    delta: f64,
) -> f64 {
    let nf = n as f64;
    let first = 1.0 / (4.0 * nf * l);
    let denom = 8.0 * (nf * a * f_big).sqrt() * l * (8.0 * nf * t_sc as f64 / delta).ln();
    if denom > 0.0 {
        first.min(eta * epsilon / denom)
    } else {
        first
    }
}

/// Record of a fixed-point solve: the iterates and both sides of the defining
/// relation at the returned value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointCertificate {
    pub iterations: usize,
    pub iterates: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

/// Right-hand side of `n T_sc = 6F(ηε)^-2 max{nL, 2√(nAF) L (ηε)^-1 log(8nT_sc/δ)}`.
#[allow(clippy::too_many_arguments)]
pub fn t_sc_rhs(n: usize, l: f64, a: f64, f_big: f64, eta: f64, epsilon: f64, delta: f64, t: u64) -> f64 {
    let nf = n as f64;
    let tol = eta * epsilon;
    let log = (8.0 * nf * t as f64 / delta).ln();
    6.0 * f_big / (tol * tol) * (nf * l).max(2.0 * (nf * a * f_big).sqrt() * l / tol * log)
}

/// Smallest integer `T` with `nT ≥ rhs(T)`, by the increasing iteration
/// `T ← ceil(rhs(T)/n)` from the log-free value `ceil(6FL(ηε)^-2)`.
pub fn solve_t_sc(
    n: usize,
    l: f64,
    a: f64,
    f_big: f64,
    eta: f64,
    epsilon: f64,
    delta: f64,
) -> Result<(u64, FixedPointCertificate), OptimError> {
    if !(f_big > 0.0) {
        return Err(OptimError::Parameter(
            "F must be positive for the stopping-time bound; x0 may already be optimal".into(),
        ));
    }
    if !(l > 0.0 && a > 0.0 && eta > 0.0 && epsilon > 0.0 && delta > 0.0 && delta < 1.0) || n == 0 {
        return Err(OptimError::Parameter("stopping-time inputs out of range".into()));
    }
    let h = |t: u64| (t_sc_rhs(n, l, a, f_big, eta, epsilon, delta, t) / n as f64).ceil();
    let seed = (6.0 * f_big * l / (eta * epsilon).powi(2)).ceil().max(1.0);
    let mut t = seed;
    let mut iterates = vec![t];
    for _ in 0..FIXED_POINT_CAP {
        if !(t < 9.0e18) {
            break;
        }
        let next = h(t as u64);
        if next <= t {
            let tu = t as u64;
            return Ok((
                tu,
                FixedPointCertificate {
                    iterations: iterates.len() - 1,
                    lhs: n as f64 * t,
                    rhs: t_sc_rhs(n, l, a, f_big, eta, epsilon, delta, tu),
                    iterates,
                },
            ));
        }
        t = next;
        iterates.push(t);
    }
    Err(OptimError::Numeric {
        what: "T_sc".into(),
        iterates,
    })
}

/// Saddle-escape parameters with their fixed-point certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrrParams {
    pub r: f64,
    pub beta: f64,
    /// The six candidates whose minimum is `beta`, evaluated at `beta`.
    pub beta_branches: [f64; 6],
    pub r_d: f64,
    pub r_p: f64,
    pub t_e: u64,
    pub eta: f64,
    pub r_certificate: FixedPointCertificate,
    pub beta_certificate: FixedPointCertificate,
}

impl PrrParams {
    /// Replace the escape step and recompute the escape budget
    /// `T_e = ceil(R/(√(ρε) n β))`; radii are unchanged.
    pub fn with_escape_step(mut self, beta: f64, n: usize, rho: f64, epsilon: f64) -> Self {
        self.beta = beta;
        self.t_e = escape_epochs(self.r, rho, epsilon, n, beta);
        self
    }
}

pub fn escape_epochs(r: f64, rho: f64, epsilon: f64, n: usize, beta: f64) -> u64 {
    let t = (r / ((rho * epsilon).sqrt() * n as f64 * beta)).ceil();
    if t >= u64::MAX as f64 {
        u64::MAX
    } else {
        t as u64
    }
}

/// `r_d / r_p` as a function of `R`.
fn radius_ratio(r: f64, l: f64, rho: f64, epsilon: f64) -> f64 {
    (8.0 * r.powi(4)).max(2.0 * r * l.sqrt() / (rho * epsilon).powf(0.25))
}

#[allow(clippy::too_many_arguments)]
fn beta_branches(n: usize, l: f64, a: f64, f_big: f64, rho: f64, epsilon: f64, delta: f64, r: f64, beta: f64) -> [f64; 6] {
    let nf = n as f64;
    let sre = (rho * epsilon).sqrt();
    let log = (8.0 * r / (delta * sre * beta)).ln();
    let saf = (a * f_big).sqrt();
    [
        1.0 / (4.0 * nf * l),
        sre / (r * r * l * l * nf),
        (rho * epsilon).powf(0.25) / (r * l * a.sqrt() * nf.sqrt() * log),
        epsilon.sqrt() / (8.0 * 2f64.sqrt() * r * r * rho.sqrt() * saf * nf.sqrt() * log),
        1.0 / (4.0 * r * r * rho.sqrt() * nf * epsilon.sqrt()),
        epsilon / (2.0 * r.powi(4) * l * saf * nf.sqrt() * log),
    ]
}

fn min6(v: &[f64; 6]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Computes `R` (increasing fixed point through `r_d/r_p`), then `β` (decreasing
/// fixed point through its log terms), then `r_d`, `r_p`, `T_e` and `η = 1/2`.
#[allow(clippy::too_many_arguments)]
pub fn compute_prr_params(
    n: usize,
    l: f64,
    a: f64,
    b: f64,
    f_big: f64,
    rho: f64,
    epsilon: f64,
    delta: f64,
    d: usize,
) -> Result<PrrParams, OptimError> {
    if !(l > 0.0 && a > 0.0 && rho > 0.0 && epsilon > 0.0 && delta > 0.0 && delta < 1.0) || n == 0 || d == 0 {
        return Err(OptimError::Parameter("escape-parameter inputs out of range".into()));
    }
    let gap = f_big - b / a;
    if !(gap > 0.0) {
        return Err(OptimError::Parameter(format!(
            "F - B/A = {gap} is not positive; perturb x0 away from the minimizer"
        )));
    }
    let term2 = (3.0 * epsilon.powf(1.5) / (4.0 * rho.sqrt() * gap)).powf(1.0 / 6.0);
    let coef = 4.0 * (d as f64).sqrt() / (std::f64::consts::PI.sqrt() * delta);
    let term3 = |r: f64| 2.0 * (coef * radius_ratio(r, l, rho, epsilon)).ln();
    let mut r = 32f64.max(term2);
    let mut r_iterates = vec![r];
    let mut converged = false;
    for _ in 0..FIXED_POINT_CAP {
        let next = r.max(term3(r));
        if next <= r * (1.0 + 1e-15) {
            r = next;
            converged = true;
            break;
        }
        r = next;
        r_iterates.push(r);
    }
    if !converged {
        return Err(OptimError::Numeric {
            what: "R".into(),
            iterates: r_iterates,
        });
    }
    let r_certificate = FixedPointCertificate {
        iterations: r_iterates.len() - 1,
        iterates: r_iterates,
        lhs: r,
        rhs: 32f64.max(term2).max(term3(r)),
    };

    let branches = |beta: f64| beta_branches(n, l, a, f_big, rho, epsilon, delta, r, beta);
    let log_free = branches(1.0);
    let mut beta = log_free[0].min(log_free[1]).min(log_free[4]);
    let mut beta_iterates = vec![beta];
    converged = false;
    for _ in 0..FIXED_POINT_CAP {
        let next = min6(&branches(beta));
        if next == beta || (beta - next).abs() <= 1e-15 * beta {
            beta = next.min(beta);
            converged = true;
            break;
        }
        beta = next;
        beta_iterates.push(beta);
    }
    if !converged {
        return Err(OptimError::Numeric {
            what: "beta".into(),
            iterates: beta_iterates,
        });
    }
    let beta_branches = branches(beta);
    let beta_certificate = FixedPointCertificate {
        iterations: beta_iterates.len() - 1,
        iterates: beta_iterates,
        lhs: beta,
        rhs: min6(&beta_branches),
    };
    let r_d = epsilon.sqrt() / (rho.sqrt() * r * r);
    let r_p = (epsilon.sqrt() / (8.0 * rho.sqrt() * r.powi(6)))
        .min(epsilon.powf(0.75) / (2.0 * rho.powf(0.25) * r.powi(3) * l.sqrt()));
    Ok(PrrParams {
        r,
        beta,
        beta_branches,
        r_d,
        r_p,
        t_e: escape_epochs(r, rho, epsilon, n, beta),
        eta: 0.5,
        r_certificate,
        beta_certificate,
    })
}

/// `ceil(max{√n ε^-3, n ε^-5/2} · log(1/(εδ)) / n)` epochs: the
/// second-order complexity with its polylog factor taken as `log(1/(εδ))`.
pub fn escape_complexity_epochs(n: usize, epsilon: f64, delta: f64) -> u64 {
    let nf = n as f64;
    let evals = (nf.sqrt() * epsilon.powi(-3)).max(nf * epsilon.powf(-2.5)) * (1.0 / (epsilon * delta)).ln().max(1.0);
    (evals / nf).ceil() as u64
}

/// Default global epoch cap for p-RR: ten times [`escape_complexity_epochs`].
pub fn default_prr_epoch_cap(n: usize, epsilon: f64, delta: f64) -> u64 {
    escape_complexity_epochs(n, epsilon, delta).saturating_mul(10)
}
