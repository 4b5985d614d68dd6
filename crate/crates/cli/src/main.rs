use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reshuffle_core::harness::{
    certificate_checks, compare_rr_sgd, derive_params, escape_demo, escape_demo_config, run_experiment, tail_check,
    build_problem, write_csv, write_json, HarnessError, ProblemKind, RunConfig,
};

#[derive(Parser)]
#[command(name = "reshuffle-opt", version, about = "Random reshuffling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Worker threads (0 uses every core).
    #[arg(long)]
    parallelism: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.seed {
            cfg.base_seed = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if let Some(v) = self.parallelism {
            cfg.parallelism = v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the trials of one configuration.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Directory for aggregate.json and trace.csv; JSON goes to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired comparison of two configurations (typically rr against sgd).
    Compare {
        first: PathBuf,
        second: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Switch both sides to the MNIST network with 100 trials.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit 2 unless the first side's median and IQR are no larger.
        #[arg(long)]
        check: bool,
    },
    /// Monte-Carlo sweeps of the without-replacement tail bound and the
    /// gradient-error certificate.
    VerifyConcentration {
        #[arg(long, default_value_t = 100_000)]
        draws: u64,
        #[arg(long, default_value_t = 10_000)]
        certificate_draws: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        check: bool,
    },
    /// Plain RR against perturbed RR from the quartic saddle.
    EscapeDemo {
        #[arg(long, default_value_t = 50)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        control_epochs: u64,
        #[arg(long)]
        epoch_cap: Option<u64>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Exit 2 unless escape succeeds in at least 90% of trials.
        #[arg(long)]
        check: bool,
    },
    /// Print every derived step size, bound and radius for a configuration.
    Params {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

enum Failure {
    Harness(HarnessError),
    Check(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Harness(e)
    }
}

fn io(path: &Path, e: std::io::Error) -> Failure {
    Failure::Harness(HarnessError::Io { path: path.display().to_string(), message: e.to_string() })
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { config, overrides, out } => {
            let cfg = load(&config, &overrides)?;
            let output = run_experiment(&cfg)?;
            for f in &output.aggregate.frequencies {
                eprintln!("{}: {}/{} ({:.3}, 95% [{:.3}, {:.3}])", f.event, f.successes, f.trials, f.rate, f.wilson_low, f.wilson_high);
            }
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
                    write_json(&output.aggregate, &dir.join("aggregate.json"))?;
                    write_csv(&output.rows, &dir.join("trace.csv"))?;
                }
                None => print!("{}", output.aggregate.to_json()),
            }
            Ok(())
        }
        Command::Compare { first, second, overrides, full, out, check } => {
            let mut a = load(&first, &overrides)?;
            let mut b = load(&second, &overrides)?;
            if full {
                for cfg in [&mut a, &mut b] {
                    cfg.problem = ProblemKind::MlpMnist;
                    cfg.layers = vec![784, 50, 50, 10];
                    cfg.trials = overrides.trials.unwrap_or(100);
                    cfg.validate()?;
                }
            }
            let report = compare_rr_sgd(&a, &b)?;
            eprintln!(
                "{} median {:?} iqr {:?}; {} median {:?} iqr {:?}; KS D = {:.4}, p = {:.4}",
                report.first.algorithm,
                report.first.median,
                report.first.iqr,
                report.second.algorithm,
                report.second.median,
                report.second.iqr,
                report.ks_statistic,
                report.ks_p_value
            );
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
                std::fs::write(dir.join("comparison.json"), report.to_json()).map_err(|e| io(dir, e))?;
                for (o, name) in report.outputs.iter().zip(["first", "second"]) {
                    write_json(&o.aggregate, &dir.join(format!("{name}.json")))?;
                    write_csv(&o.rows, &dir.join(format!("{name}.csv")))?;
                }
            } else {
                print!("{}", report.to_json());
            }
            if check && !(report.first_median_le_second && report.first_iqr_le_second) {
                return Err(Failure::Check("first side is not concentrated below the second".into()));
            }
            Ok(())
        }
        Command::VerifyConcentration { draws, certificate_draws, seed, out, check } => {
            let tails = tail_check(draws, seed)?;
            let certs = certificate_checks(&[0.05, 0.1], certificate_draws, seed)?;
            for t in &tails.tails {
                eprintln!(
                    "s = {:5.2}  exact {:.5}  mc {:.5} ± {:.5}  bound {:.5}",
                    t.threshold_s,
                    t.exact_tail.unwrap_or(f64::NAN),
                    t.empirical_tail,
                    t.wilson_halfwidth,
                    t.bound_value
                );
            }
            for c in &certs {
                let worst = c.certificates.iter().map(|p| p.frequency).fold(0.0, f64::max);
                eprintln!("{} at {:?}, delta {}: max violation rate {:.4} ({})", c.problem, c.probe, c.delta, worst, if c.holds { "ok" } else { "VIOLATED" });
            }
            emit(&pretty(&serde_json::json!({ "tails": tails, "certificates": certs })), out.as_deref())?;
            let ok = tails.dominated && tails.agrees && certs.iter().all(|c| c.holds);
            if check && !ok {
                return Err(Failure::Check("concentration sweep failed".into()));
            }
            Ok(())
        }
        Command::EscapeDemo { trials, seed, control_epochs, epoch_cap, parallelism, out, check } => {
            let mut cfg = escape_demo_config(trials, seed);
            cfg.epoch_cap = epoch_cap;
            cfg.parallelism = parallelism.unwrap_or(0);
            cfg.validate()?;
            let demo = escape_demo(&cfg, control_epochs)?;
            eprintln!(
                "plain RR stays at the saddle for {} epochs: {}; escape success {}/{} ({:.3})",
                demo.control_epochs, demo.control_stays_put, demo.success.successes, demo.success.trials, demo.success.rate
            );
            emit(&pretty(&demo), out.as_deref())?;
            if check && !(demo.control_stays_put && demo.success.rate >= 0.9) {
                return Err(Failure::Check("escape success below 0.9".into()));
            }
            Ok(())
        }
        Command::Params { config, overrides } => {
            let cfg = load(&config, &overrides)?;
            let problem = build_problem(&cfg)?;
            print!("{}", pretty(&derive_params(&cfg, problem.as_ref())?));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Harness(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
    }
}
