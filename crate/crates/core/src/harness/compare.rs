use std::collections::BTreeMap;

use serde::Serialize;

use super::config::RunConfig;
use super::run::{run_experiment, ExperimentOutput, TraceRow};
use super::HarnessError;
use crate::stats::{ks_two_sample, quantiles, Quantiles};

/// Keys that may differ between the two sides of a comparison.
const ALGORITHM_KEYS: [&str; 16] = [
    "algorithm",
    "schedule",
    "step",
    "initial_step",
    "decay",
    "epsilon",
    "delta",
    "eta",
    "rho",
    "params_x0",
    "record_every",
    "full_gradient_threshold",
    "full_gradient_every",
    "epoch_cap",
    "escape_profile",
    "certificate_delta",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub epoch: u64,
    pub median_f: Option<f64>,
    pub median_grad_norm: Option<f64>,
    pub median_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub grad_norm_last: Option<Quantiles>,
    pub median: Option<f64>,
    pub iqr: Option<f64>,
    pub failed_trials: u64,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedNorms {
    pub trial: u64,
    pub first: Option<f64>,
    pub second: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub first: AlgorithmSummary,
    pub second: AlgorithmSummary,
    pub paired: Vec<PairedNorms>,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub first_median_le_second: bool,
    pub first_iqr_le_second: bool,
    #[serde(skip)]
    pub outputs: Vec<ExperimentOutput>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn shared_part(cfg: &RunConfig) -> serde_json::Value {
    let mut v = cfg.echo();
    if let Some(map) = v.as_object_mut() {
        for k in ALGORITHM_KEYS {
            map.remove(k);
        }
    }
    v
}

fn median(values: Vec<f64>) -> Option<f64> {
    quantiles(&values).map(|q| q.median)
}

fn curve(rows: &[TraceRow]) -> Vec<CurvePoint> {
    let mut by_epoch: BTreeMap<u64, Vec<&TraceRow>> = BTreeMap::new();
    for r in rows {
        by_epoch.entry(r.epoch).or_default().push(r);
    }
    by_epoch
        .into_iter()
        .map(|(epoch, rs)| CurvePoint {
            epoch,
            median_f: median(rs.iter().filter_map(|r| r.f).collect()),
            median_grad_norm: median(rs.iter().filter_map(|r| r.grad_norm).collect()),
            median_accuracy: median(rs.iter().filter_map(|r| r.accuracy).collect()),
        })
        .collect()
}

fn summarize(cfg: &RunConfig, out: &ExperimentOutput) -> AlgorithmSummary {
    let q = out.aggregate.quantiles.grad_norm_last;
    AlgorithmSummary {
        algorithm: cfg.algorithm.as_str().to_string(),
        grad_norm_last: q,
        median: q.map(|q| q.median),
        iqr: q.map(|q| q.iqr()),
        failed_trials: out.aggregate.trials.iter().filter(|t| t.grad_norm_last.is_none()).count() as u64,
        curve: curve(&out.rows),
    }
}

/// Runs both configurations on the same problem, trials, seeds and epoch
/// budget and reports paired last-iterate gradient norms.
pub fn compare_rr_sgd(first: &RunConfig, second: &RunConfig) -> Result<ComparisonReport, HarnessError> {
    if shared_part(first) != shared_part(second) {
        return Err(HarnessError::Config(
            "compared runs must share the problem, trials, seeds and epoch budget".into(),
        ));
    }
    let a = run_experiment(first)?;
    let b = run_experiment(second)?;
    let paired: Vec<PairedNorms> = a
        .aggregate
        .trials
        .iter()
        .zip(&b.aggregate.trials)
        .map(|(x, y)| PairedNorms { trial: x.trial, first: x.grad_norm_last, second: y.grad_norm_last })
        .collect();
    let xs: Vec<f64> = paired.iter().filter_map(|p| p.first).collect();
    let ys: Vec<f64> = paired.iter().filter_map(|p| p.second).collect();
    let (ks_statistic, ks_p_value) = if xs.is_empty() || ys.is_empty() { (1.0, 0.0) } else { ks_two_sample(&xs, &ys) };
    let sa = summarize(first, &a);
    let sb = summarize(second, &b);
    let le = |p: Option<f64>, q: Option<f64>| matches!((p, q), (Some(p), Some(q)) if p <= q);
    Ok(ComparisonReport {
        schema_version: super::SCHEMA_VERSION,
        first_median_le_second: le(sa.median, sb.median),
        first_iqr_le_second: le(sa.iqr, sb.iqr),
        first: sa,
        second: sb,
        paired,
        ks_statistic,
        ks_p_value,
        outputs: vec![a, b],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Algorithm, ProblemKind, ScheduleKind};

    fn side(algorithm: Algorithm) -> RunConfig {
        RunConfig {
            algorithm,
            schedule: ScheduleKind::Constant,
            step: Some(0.1),
            trials: 8,
            epochs: 10,
            x0: Some(vec![3.0]),
            ..Default::default()
        }
    }

    #[test]
    fn self_comparison_is_identical() {
        let r = compare_rr_sgd(&side(Algorithm::Rr), &side(Algorithm::Rr)).unwrap();
        assert_eq!(r.first, r.second);
        assert_eq!(r.ks_statistic, 0.0);
        assert!(r.first_median_le_second && r.first_iqr_le_second);
    }

    #[test]
    fn mismatched_problems_rejected() {
        let mut other = side(Algorithm::Sgd);
        other.problem = ProblemKind::QuarticSaddle;
        assert!(matches!(compare_rr_sgd(&side(Algorithm::Rr), &other), Err(HarnessError::Config(_))));
        let mut other = side(Algorithm::Sgd);
        other.base_seed = 9;
        assert!(compare_rr_sgd(&side(Algorithm::Rr), &other).is_err());
    }

    #[test]
    fn single_component_sides_agree_in_distribution() {
        let mut a = side(Algorithm::Rr);
        a.anchors = Some(vec![vec![1.0]]);
        a.trials = 100;
        let b = RunConfig { algorithm: Algorithm::Sgd, ..a.clone() };
        let r = compare_rr_sgd(&a, &b).unwrap();
        assert!(r.ks_p_value >= 0.01, "KS p = {}", r.ks_p_value);
        assert_eq!(r.first.curve.len(), 10);
    }
}
