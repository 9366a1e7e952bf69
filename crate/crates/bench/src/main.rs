//! `certmpc` command-line harness.
//!
//! Exit codes: 0 pass, 1 validation failure, 2 configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use certmpc::ScalingMode;
use certmpc_bench::config::{Experiment, ExperimentConfig};
use certmpc_bench::experiments::{
    bounds_csv, run_closed_loop, run_integrator_bounds, run_integrator_certify,
    run_random_qp_suite,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "certmpc", about = "Certified fast-gradient QP and MPC experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Random QP certification suite and ratio histogram.
    QpSuite(Common),
    /// Precision sweep and certified interval of an integrator design.
    MpcCertify(Common),
    /// Precision bounds over a grid of cost levels.
    MpcBounds(Common),
    /// Closed-loop run with the online monitor.
    Simulate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// paper | conservative
    #[arg(long)]
    mode: Option<String>,
}

enum Fail {
    Config(String),
    Validation(String),
}

fn load(common: &Common, experiment: Experiment) -> Result<ExperimentConfig, Fail> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Fail::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text).map_err(Fail::Config)?
        }
        None if experiment == Experiment::ClosedLoop => ExperimentConfig::small_closed_loop(),
        None => ExperimentConfig::default(),
    };
    cfg.experiment = experiment;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.display().to_string();
    }
    if let Some(mode) = &common.mode {
        cfg.scaling_mode = mode
            .parse::<ScalingMode>()
            .map_err(|e| Fail::Config(e.to_string()))?;
    }
    cfg.validate().map_err(Fail::Config)?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), Fail> {
    std::fs::create_dir_all(dir)
        .and_then(|_| std::fs::write(dir.join(name), body))
        .map_err(|e| Fail::Config(format!("cannot write {}: {e}", dir.join(name).display())))?;
    println!("wrote {}", dir.join(name).display());
    Ok(())
}

/// Library errors in setup are configuration problems (bad dimensions,
/// parameters, designs); anything else found while running is a validation failure.
fn lib_err(e: certmpc::Error) -> Fail {
    match e {
        certmpc::Error::Parameter(_)
        | certmpc::Error::Dimension { .. }
        | certmpc::Error::Design(_) => Fail::Config(e.to_string()),
        _ => Fail::Validation(e.to_string()),
    }
}

fn run(cmd: Cmd) -> Result<(), Fail> {
    match cmd {
        Cmd::QpSuite(c) => {
            let cfg = load(&c, Experiment::RandomQpSuite)?;
            let dir = PathBuf::from(&cfg.output_dir);
            let suite = run_random_qp_suite(&cfg).map_err(lib_err)?;
            write(&dir, "qp_suite.csv", &suite.to_csv())?;
            write(&dir, "qp_histogram.csv", &suite.histogram_csv())?;
            let fails = suite.failures();
            println!(
                "trials {} passed {} max ratio {:.4}",
                suite.rows.len(),
                suite.rows.len() - fails.len(),
                suite.max_ratio()
            );
            if !fails.is_empty() {
                return Err(Fail::Validation(format!(
                    "failed trials (seed {}, stream = trial index): {fails:?}",
                    cfg.seed
                )));
            }
        }
        Cmd::MpcCertify(c) => {
            let cfg = load(&c, Experiment::IntegratorCertify)?;
            let dir = PathBuf::from(&cfg.output_dir);
            let res = run_integrator_certify(&cfg).map_err(lib_err)?;
            write(&dir, "certify_sweep.csv", &res.sweep_csv())?;
            write(&dir, "certify_report.json", &res.report_json())?;
            match res.interval {
                Some((lo, hi)) => println!("certified eps0 in [{lo:e}, {hi:e}]"),
                None => {
                    return Err(Fail::Validation(format!(
                        "no admissible precision at q_min = {}; closest margin {:e}",
                        res.q_bar,
                        res.closest_margin.unwrap_or(f64::NAN)
                    )))
                }
            }
        }
        Cmd::MpcBounds(c) => {
            let cfg = load(&c, Experiment::IntegratorBounds)?;
            let dir = PathBuf::from(&cfg.output_dir);
            let law = run_integrator_bounds(&cfg).map_err(lib_err)?;
            write(&dir, "bounds.csv", &bounds_csv(&law))?;
            write(&dir, "law.csv", &law.to_csv())?;
        }
        Cmd::Simulate(c) => {
            let cfg = load(&c, Experiment::ClosedLoop)?;
            let dir = PathBuf::from(&cfg.output_dir);
            let res = run_closed_loop(&cfg).map_err(lib_err)?;
            write(&dir, "trace.csv", &res.trace.to_csv())?;
            write(&dir, "monitor.json", &res.report.to_json())?;
            println!(
                "events {} outside {} (bound {:.1})",
                res.trace.events.len(),
                res.report.events_outside,
                res.report.event_bound
            );
            if !res.report.all_ok() {
                let bad = &res.report.failing_events;
                return Err(Fail::Validation(format!(
                    "monitor failed at {} events, first at index {}; see monitor.json",
                    bad.len(),
                    bad.first().map_or("?".to_string(), |k| k.to_string())
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Validation(msg)) => {
            eprintln!("validation failure: {msg}");
            ExitCode::from(1)
        }
        Err(Fail::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
    }
}
