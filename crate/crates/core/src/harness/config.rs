//! Flat run-configuration schema (TOML, or JSON for echoed configs).
//!
//! Every key is optional; absent keys take the defaults below. Seeds:
//! trial `k` draws from the stream `(base_seed, k)`, and problem-specific
//! randomness (synthetic data, tilts) from `problem_seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    MeanQuadratic,
    QuarticSaddle,
    Logistic,
    MlpBlobs,
    MlpMnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "rr")]
    Rr,
    #[serde(rename = "rr-sc")]
    RrSc,
    #[serde(rename = "p-rr")]
    Prr,
    #[serde(rename = "sgd")]
    Sgd,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Rr => "rr",
            Algorithm::RrSc => "rr-sc",
            Algorithm::Prr => "p-rr",
            Algorithm::Sgd => "sgd",
        }
    }
}

/// `formula` derives steps from problem constants; `constant` and `decayed`
/// use `step` or `initial_step`/`decay`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Formula,
    Constant,
    Decayed,
}

/// `theory` uses the escape step from its defining minimum; `desk` replaces
/// it by `1/(4nL)` and rescales `T_e`, keeping both radii.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscapeProfile {
    Theory,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub algorithm: Algorithm,
    pub schedule: ScheduleKind,
    pub step: Option<f64>,
    pub initial_step: Option<f64>,
    pub decay: Option<f64>,
    /// Epoch budget `T` for rr/sgd. RR-sc stops by `T_sc`, p-RR by `epoch_cap`.
    pub epochs: u64,
    pub epsilon: f64,
    pub delta: f64,
    pub eta: f64,
    pub trials: u64,
    pub base_seed: u64,
    /// Worker threads (0: all available); capped by `RESHUFFLE_OPT_THREADS`.
    #[serde(skip_serializing)]
    pub parallelism: usize,
    /// Output directory for `aggregate.json` and `trace.csv`.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    /// Starting point; defaults to the problem's own initializer, else zero.
    pub x0: Option<Vec<f64>>,
    /// Point at which `f(x0)`, and hence `F`, enters the formulas (defaults to `x0`).
    pub params_x0: Option<Vec<f64>>,
    /// Hessian Lipschitz constant override.
    pub rho: Option<f64>,

    pub anchors: Option<Vec<Vec<f64>>>,
    pub components: usize,
    pub bias_scale: f64,
    pub problem_seed: u64,
    pub samples: usize,
    pub dim: usize,
    pub l2: f64,
    pub layers: Vec<usize>,
    pub classes: usize,
    pub per_class: usize,
    pub separation: f64,
    pub batch: usize,
    pub mnist_images: Option<PathBuf>,
    pub mnist_labels: Option<PathBuf>,
    pub limit: Option<usize>,

    /// Record every k-th epoch (0: none).
    pub record_every: u64,
    /// Full gradients on every recorded epoch when `d·n` is at most this.
    pub full_gradient_threshold: u64,
    /// Above the threshold, full gradients every k-th epoch (0: never).
    pub full_gradient_every: u64,
    /// Global epoch cap for p-RR (default: ten times the complexity bound).
    pub epoch_cap: Option<u64>,
    pub escape_profile: EscapeProfile,
    /// `δ'` for the per-epoch stochastic-error certificate.
    pub certificate_delta: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: ProblemKind::MeanQuadratic,
            algorithm: Algorithm::Rr,
            schedule: ScheduleKind::Formula,
            step: None,
            initial_step: None,
            decay: None,
            epochs: 100,
            epsilon: 0.05,
            delta: 0.1,
            eta: 0.5,
            trials: 100,
            base_seed: 0,
            parallelism: 0,
            out: None,
            x0: None,
            params_x0: None,
            rho: None,
            anchors: None,
            components: 2,
            bias_scale: 0.0,
            problem_seed: 0,
            samples: 20,
            dim: 2,
            l2: 0.05,
            layers: vec![20, 50, 50, 10],
            classes: 10,
            per_class: 600,
            separation: 3.0,
            batch: 8,
            mnist_images: None,
            mnist_labels: None,
            limit: None,
            record_every: 1,
            full_gradient_threshold: 100_000,
            full_gradient_every: 1,
            epoch_cap: None,
            escape_profile: EscapeProfile::Theory,
            certificate_delta: 0.1,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads TOML, or JSON when the file ends in `.json`; relative data paths
    /// resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.mnist_images, &mut cfg.mnist_labels].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.trials < 1 {
            return fail("trials must be at least 1".into());
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.certificate_delta > 0.0 && self.certificate_delta < 1.0) {
            return fail(format!("certificate_delta must lie in (0, 1), got {}", self.certificate_delta));
        }
        if !(self.eta > 0.0) {
            return fail(format!("eta must be positive, got {}", self.eta));
        }
        match self.schedule {
            ScheduleKind::Formula if self.algorithm == Algorithm::Sgd => {
                return fail("sgd needs a constant or decayed schedule".into());
            }
            ScheduleKind::Constant if !self.step.is_some_and(|s| s >= 0.0 && s.is_finite()) => {
                return fail("constant schedule needs a finite step >= 0".into());
            }
            ScheduleKind::Decayed => {
                let ok = self.initial_step.is_some_and(|s| s > 0.0)
                    && self.decay.is_some_and(|f| f > 0.0 && f <= 1.0);
                if !ok {
                    return fail("decayed schedule needs initial_step > 0 and decay in (0, 1]".into());
                }
            }
            _ => {}
        }
        if matches!(self.algorithm, Algorithm::RrSc | Algorithm::Prr) && self.schedule != ScheduleKind::Formula {
            return fail(format!("{} derives its steps from formulas; set schedule = \"formula\"", self.algorithm.as_str()));
        }
        if self.rho.is_some_and(|r| !(r > 0.0)) {
            return fail("rho must be positive".into());
        }
        match self.problem {
            ProblemKind::QuarticSaddle if self.components == 0 => fail("components must be positive".into()),
            ProblemKind::Logistic if self.samples == 0 || self.dim == 0 => {
                fail("logistic needs positive samples and dim".into())
            }
            ProblemKind::MlpBlobs if self.classes == 0 || self.per_class == 0 || self.batch == 0 => {
                fail("blobs need positive classes, per_class and batch".into())
            }
            ProblemKind::MlpMnist if self.mnist_images.is_none() || self.mnist_labels.is_none() => {
                fail("mlp_mnist needs mnist_images and mnist_labels".into())
            }
            _ => Ok(()),
        }
    }

    /// The echo written into reports; loading it back reproduces the run.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_overrides_and_unknown_keys() {
        let cfg = RunConfig::from_toml_str("algorithm = \"rr-sc\"\nepsilon = 0.1\nanchors = [[1.0], [-1.0]]\n").unwrap();
        assert_eq!(cfg.algorithm, Algorithm::RrSc);
        assert_eq!(cfg.epsilon, 0.1);
        assert_eq!(cfg.trials, 100);
        assert!(matches!(RunConfig::from_toml_str("bogus = 1"), Err(HarnessError::Config(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = [
            RunConfig { trials: 0, ..Default::default() },
            RunConfig { epsilon: 0.0, ..Default::default() },
            RunConfig { delta: 1.0, ..Default::default() },
            RunConfig { algorithm: Algorithm::Sgd, ..Default::default() },
            RunConfig { schedule: ScheduleKind::Constant, ..Default::default() },
            RunConfig { algorithm: Algorithm::RrSc, schedule: ScheduleKind::Constant, step: Some(0.1), ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn echo_round_trips_without_runtime_fields() {
        let cfg = RunConfig { parallelism: 3, out: Some("x".into()), x0: Some(vec![2.0]), ..Default::default() };
        let echo = cfg.echo();
        assert!(echo.get("parallelism").is_none());
        assert!(echo.get("out").is_none());
        let back = RunConfig::from_json_str(&echo.to_string()).unwrap();
        assert_eq!(back, RunConfig { parallelism: 0, out: None, ..cfg });
    }
}
