//! Batch front end: runs a scenario file end to end and writes the output
//! artifacts.
//!
//! Exit codes: 0 on success (and verification pass), 2 when no feasible
//! plan exists, 3 when verification fails in verify mode, 1 on any other
//! error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use percept_plan::scenario::{load_scenario, run, validate, Mode};
use percept_plan::PlanError;

#[derive(Parser)]
#[command(
    name = "plan",
    about = "Plan a perception-aware trajectory from a scenario file and optionally certify it"
)]
struct Args {
    /// Scenario JSON file.
    scenario: PathBuf,
    /// Override the scenario's mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Worker threads for the parallel phases; 0 uses the rayon default.
    /// The outputs are identical for any value.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory for solution.json, pareto.json, trials.csv, and
    /// summary.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn execute(args: &Args) -> Result<u8, PlanError> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(mode) = args.mode {
        scenario.mode = mode;
        validate(&scenario)?;
    }

    let report = if args.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.workers)
            .build()
            .map_err(|e| PlanError::Validation(format!("worker pool: {e}")))?;
        pool.install(|| run(&scenario, &args.out))?
    } else {
        run(&scenario, &args.out)?
    };

    if !report.feasible {
        eprintln!("no feasible plan within the heuristic bound");
        return Ok(2);
    }
    println!(
        "cost {:.6}  h {:.6}{}",
        report.cost.unwrap_or(f64::NAN),
        report.h.unwrap_or(f64::NAN),
        match (report.p_hat, report.pass) {
            (Some(p), Some(ok)) => format!(
                "  p_hat {:.4}  {}",
                p,
                if ok { "pass" } else { "FAIL" }
            ),
            _ => String::new(),
        }
    );
    if scenario.mode == Mode::Verify && report.pass == Some(false) {
        return Ok(3);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(code) => ExitCode::from(code),
        Err(e @ (PlanError::NoFeasiblePlan
        | PlanError::NoGoalSample
        | PlanError::InfeasibleSpace { .. })) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
