//! Command-line front end: batch runs, the grid oracle and report rebuilds.
//!
//! Exit codes: 0 on full success, 2 when some runs diverged, 1 on
//! configuration or other errors.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use pcgeo::harness::{rebuild_report, run_experiment, ExperimentConfig, ExperimentOutcome};
use pcgeo::oracle::{oracle_geodesic, OracleConfig};
use pcgeo::synth::{build_scenario, ScenarioSpec};
use pcgeo::Vector;

#[derive(Parser)]
#[command(name = "pcgeo", version, about = "Counterfactual geodesics under pullback metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON configuration.
    Run { config: PathBuf },
    /// Grid shortest path between two latent points of a 2-D scenario.
    Oracle {
        scenario: String,
        /// Start point, comma separated (e.g. `-1,-1`).
        #[arg(allow_hyphen_values = true)]
        z0: String,
        /// End point, comma separated.
        #[arg(allow_hyphen_values = true)]
        zt: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        resolution: usize,
        #[arg(long = "k", default_value_t = 80)]
        k_neighbors: usize,
        /// Skip the refinement check at twice the resolution.
        #[arg(long)]
        no_refine: bool,
    },
    /// Rebuild metrics.csv and summary.json from the raw reports in a run directory.
    Report { dir: PathBuf },
}

fn parse_point(text: &str) -> anyhow::Result<Vector> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("invalid coordinate '{s}'")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if values.is_empty() {
        bail!("empty point");
    }
    Ok(Vector::from_vec(values))
}

fn print_summary(outcome: &ExperimentOutcome) {
    println!("{:<8} {:>10} {:>5} {:>9} {:>10} {:>10} {:>10}", "method", "lr", "ok", "retention", "L2", "L_R", "smooth_R");
    for (name, s) in &outcome.summary.methods {
        let mean = |m: &str| s.metrics.get(m).map_or("-".to_string(), |v| format!("{:.4}", v.mean));
        println!(
            "{:<8} {:>10} {:>5} {:>9.3} {:>10} {:>10} {:>10}",
            name,
            s.learning_rate.map_or("-".into(), |lr| format!("{lr:e}")),
            format!("{}/{}", s.ok, s.runs),
            s.retention_rate,
            mean("L2"),
            mean("L_R"),
            mean("smoothness_robust"),
        );
    }
    println!("results in {}", outcome.output_dir.display());
}

fn outcome_code(outcome: &ExperimentOutcome) -> ExitCode {
    if outcome.fully_succeeded() {
        ExitCode::SUCCESS
    } else {
        eprintln!("{} of {} runs diverged", outcome.diverged, outcome.cells);
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => ExperimentConfig::from_file(&config)
            .and_then(|cfg| run_experiment(&cfg))
            .map(|o| {
                print_summary(&o);
                outcome_code(&o)
            })
            .map_err(anyhow::Error::from),
        Command::Report { dir } => rebuild_report(&dir)
            .map(|o| {
                print_summary(&o);
                outcome_code(&o)
            })
            .map_err(anyhow::Error::from),
        Command::Oracle {
            scenario,
            z0,
            zt,
            seed,
            resolution,
            k_neighbors,
            no_refine,
        } => (|| {
            let sc = build_scenario(&ScenarioSpec::new(&scenario, seed))?;
            let cfg = OracleConfig {
                resolution,
                k_neighbors,
                check_convergence: !no_refine,
                ..Default::default()
            };
            let out = oracle_geodesic(&sc, &parse_point(&z0)?, &parse_point(&zt)?, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(if out.converged == Some(false) { ExitCode::from(2) } else { ExitCode::SUCCESS })
        })(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
