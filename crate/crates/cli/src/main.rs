//! Command-line pipeline: `solve` a scenario, `simulate` the control on a
//! finite fleet, `check-slater` for the strong-duality certificate, and
//! `report` for plot-ready CSV extracts.
//!
//! Exit codes: 0 success, 1 usage/parse/missing-input errors, 2 solve
//! completed with a non-vanishing feasibility residual (infeasibility
//! signature). Set MFCHARGE_LOG=quiet|info|debug to control progress output.

use clap::{Parser, Subcommand};
use mfcharge::fleet::{
    fleet_stats, interpolate_control, simulate, DeploymentMesh, FleetState,
    MESH_CONDITION_WARN,
};
use mfcharge::report::{self, RunManifest, SimulationSummary};
use mfcharge::scenario::{load_scenario, Scenario};
use mfcharge::solver::{build_saddle_problem, extract_alpha, slater_certificate, solve, SolverError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Residual above which a completed solve is flagged as infeasible.
const INFEASIBILITY_SIGNATURE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "mfcharge", version, about = "Mean-field charging control pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario file and write the optimal occupancy/flux fields.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        /// Output directory (created if absent).
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's iteration budget.
        #[arg(long)]
        max_iter: Option<usize>,
        /// Recorded in the manifest; reserved for stochastic extensions.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Deploy the solved control onto a finite fleet.
    Simulate {
        /// Directory produced by `solve`.
        solve_dir: PathBuf,
        /// Fleet size (defaults to the scenario's).
        #[arg(long)]
        n: Option<usize>,
        /// Deployment SoC cell width (defaults to the solver mesh).
        #[arg(long)]
        mesh_u: Option<f64>,
        /// Deployment time step in seconds (defaults to the solver mesh).
        #[arg(long)]
        mesh_dr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate the sufficient certificate for strong duality.
    CheckSlater {
        #[arg(long)]
        scenario: PathBuf,
        /// Strict-feasibility margin e, 0 < e < d_upper of the charging mode.
        #[arg(long, default_value_t = 0.1)]
        e_margin: f64,
    },
    /// Emit plot-ready CSV reports from a run directory.
    Report {
        /// Directory holding solve + simulate outputs.
        run_dir: PathBuf,
    },
}

fn log_level() -> u8 {
    match std::env::var("MFCHARGE_LOG").as_deref() {
        Ok("quiet") => 0,
        Ok("debug") => 2,
        _ => 1,
    }
}

macro_rules! info {
    ($($arg:tt)*) => {
        if log_level() >= 1 {
            eprintln!($($arg)*);
        }
    };
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve { scenario, out, max_iter, seed } => cmd_solve(&scenario, &out, max_iter, seed),
        Command::Simulate { solve_dir, n, mesh_u, mesh_dr, seed } => {
            cmd_simulate(&solve_dir, n, mesh_u, mesh_dr, seed)
        }
        Command::CheckSlater { scenario, e_margin } => cmd_check_slater(&scenario, e_margin),
        Command::Report { run_dir } => cmd_report(&run_dir),
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn cmd_solve(
    scenario_path: &Path,
    out: &Path,
    max_iter: Option<usize>,
    seed: Option<u64>,
) -> Result<ExitCode, String> {
    let mut scenario = load_scenario(scenario_path).map_err(|e| e.to_string())?;
    if let Some(iters) = max_iter {
        scenario.solver.max_iter = iters;
    }
    let problem = build_saddle_problem(&scenario).map_err(|e| e.to_string())?;
    info!(
        "solving `{}`: {} steps x {} cells, {} iterations, ||K|| ~ {:.4}",
        scenario.name,
        scenario.grid.n_t,
        scenario.grid.n_h,
        scenario.solver.max_iter,
        problem.operator_norm_estimate
    );
    let output = solve(&problem, &scenario.solver).map_err(|e| e.to_string())?;
    let final_violation = *output.diagnostics.max_violation.last().unwrap_or(&0.0);
    info!(
        "solved in {} iterations ({:.1} s), objective {:.6e}, residual {:.3e}",
        output.diagnostics.iterations,
        output.diagnostics.wall_time_s,
        output.diagnostics.objective.last().unwrap_or(&f64::NAN),
        final_violation
    );

    std::fs::create_dir_all(out).map_err(|e| e.to_string())?;
    let scenario_text = report::scenario_toml(&scenario).map_err(|e| e.to_string())?;
    let alpha = extract_alpha(&output.m, &output.e);
    let writes: [(&str, String); 5] = [
        ("scenario.toml", scenario_text.clone()),
        ("m.csv", report::density_csv(&output.m, &scenario.grid)),
        ("e.csv", report::flow_csv(&output.e, &scenario.grid)),
        ("alpha.csv", report::flow_csv(&alpha, &scenario.grid)),
        ("diagnostics.csv", report::diagnostics_csv(&output.diagnostics)),
    ];
    let mut outputs = Vec::new();
    for (name, content) in &writes {
        report::write_atomic(&out.join(name), content).map_err(|e| e.to_string())?;
        outputs.push(name.to_string());
    }
    if let Some(seed) = seed {
        info!("seed {seed} recorded (no stochastic components in this pipeline)");
    }
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        scenario_name: scenario.name.clone(),
        scenario_sha256: report::scenario_hash(&scenario_text),
        solver: scenario.solver,
        iterations: output.diagnostics.iterations,
        wall_time_s: output.diagnostics.wall_time_s,
        outputs,
    };
    report::write_manifest(out, &manifest).map_err(|e| e.to_string())?;
    if final_violation > INFEASIBILITY_SIGNATURE {
        info!(
            "feasibility residual {final_violation:.3e} exceeds {INFEASIBILITY_SIGNATURE:.0e}: \
             infeasibility signature"
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn load_run_scenario(dir: &Path) -> Result<Scenario, String> {
    let path = dir.join("scenario.toml");
    if !path.exists() {
        return Err(format!("missing input: {}", path.display()));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
    toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_simulate(
    solve_dir: &Path,
    n: Option<usize>,
    mesh_u: Option<f64>,
    mesh_dr: Option<f64>,
    seed: Option<u64>,
) -> Result<ExitCode, String> {
    let mut scenario = load_run_scenario(solve_dir)?;
    if let Some(n) = n {
        scenario.deployment.n = n;
    }
    if let Some(u) = mesh_u {
        scenario.deployment.u = u;
    }
    if let Some(dr) = mesh_dr {
        scenario.deployment.dr = dr;
    }
    let grid = scenario.grid;
    let alpha = report::read_flow_csv(&solve_dir.join("alpha.csv"), &grid, scenario.modes.len())
        .map_err(|e| e.to_string())?;
    let mesh = DeploymentMesh::new(scenario.deployment.u, scenario.deployment.dr, grid.horizon)
        .map_err(|e| e.to_string())?;
    let control = interpolate_control(&alpha, &grid, &mesh).map_err(|e| e.to_string())?;
    let fleet = FleetState::sample_from_initial(&scenario.initial, &grid, scenario.deployment.n);
    if let Some(seed) = seed {
        info!("seed {seed} recorded (sampling is deterministic)");
    }
    let result = simulate(fleet, &control, &mesh, &scenario.constraints, &scenario.modes, &grid);
    let warn = result.mesh_condition >= MESH_CONDITION_WARN;
    info!(
        "simulated {} vehicles over {} steps; mesh condition {:.3}{}",
        scenario.deployment.n,
        mesh.n_steps,
        result.mesh_condition,
        if warn { " (above warning threshold: deployment mesh may be too fine)" } else { "" }
    );
    let stats = fleet_stats(&result, scenario.constraints.s_min, &mesh);
    info!(
        "transfers: {} total ({:.2} per vehicle); {:.2}% below SoC {:.2} at the end",
        stats.total_transfers,
        stats.mean_transfers_per_vehicle,
        100.0 * stats.fraction_below_threshold,
        stats.threshold
    );
    let summary = SimulationSummary {
        n: scenario.deployment.n,
        mesh_u: mesh.u,
        mesh_dr_s: mesh.dr,
        mesh_condition: result.mesh_condition,
        mesh_condition_warn: warn,
        stats: &stats,
    };
    let stats_json =
        serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?;
    let writes: [(&str, String); 4] = [
        ("headcounts.csv", report::headcounts_csv(&result, mesh.dr)),
        ("soc_paths.csv", report::soc_paths_csv(&result, mesh.dr)),
        ("transfers.csv", report::transfers_csv(&result, mesh.dr)),
        ("stats.json", stats_json),
    ];
    for (name, content) in &writes {
        report::write_atomic(&solve_dir.join(name), content).map_err(|e| e.to_string())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check_slater(scenario_path: &Path, e_margin: f64) -> Result<ExitCode, String> {
    let scenario = load_scenario(scenario_path).map_err(|e| e.to_string())?;
    match slater_certificate(&scenario, e_margin) {
        Ok(cert) => {
            let json = serde_json::to_string_pretty(&cert).map_err(|e| e.to_string())?;
            println!("{json}");
        }
        Err(SolverError::PremiseUnmet(msg)) => {
            println!(
                "{}",
                serde_json::json!({
                    "verified": false,
                    "premise_unmet": msg,
                    "e_margin": e_margin,
                })
            );
        }
        Err(other) => return Err(other.to_string()),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(run_dir: &Path) -> Result<ExitCode, String> {
    let scenario = load_run_scenario(run_dir)?;
    let grid = scenario.grid;
    let m = report::read_density_csv(&run_dir.join("m.csv"), &grid, scenario.modes.len())
        .map_err(|e| e.to_string())?;
    let headcounts =
        report::read_headcounts_csv(&run_dir.join("headcounts.csv")).map_err(|e| e.to_string())?;
    let soc_paths =
        report::read_soc_paths_csv(&run_dir.join("soc_paths.csv")).map_err(|e| e.to_string())?;
    let n = soc_paths[0].len();
    let per_vehicle = report::read_transfer_count_per_vehicle(&run_dir.join("transfers.csv"), n)
        .map_err(|e| e.to_string())?;
    let dr = grid.horizon / (headcounts.len() as f64 - 1.0);
    let threshold = scenario.constraints.s_min;
    let first_passage: Vec<Option<f64>> = (0..n)
        .map(|z| {
            soc_paths
                .iter()
                .position(|node| node[z] >= threshold)
                .map(|k| k as f64 * dr)
        })
        .collect();

    let mut writes: Vec<(&str, String)> = vec![
        ("occupancy_vs_time.csv", report::occupancy_report(&m, &headcounts, &grid, dr)),
        (
            "soc_histograms.csv",
            report::soc_histogram_report(&soc_paths[0], soc_paths.last().unwrap()),
        ),
        ("first_passage_histogram.csv", report::first_passage_report(&first_passage, grid.horizon)),
        ("soc_trajectories.csv", report::trajectories_report(&soc_paths, dr, 30)),
        ("transfer_histogram.csv", report::transfer_histogram_report(&per_vehicle)),
    ];
    if let Some(price) = &scenario.signals.price {
        writes.push(("price_overlay.csv", report::price_overlay_report(&price.samples, &grid)));
    }
    if let (Some(u_pred), Some(tracking)) = (&scenario.signals.u_pred, &scenario.costs.tracking) {
        writes.push((
            "tracking_comparison.csv",
            report::tracking_report(
                &u_pred.samples,
                &tracking.target,
                &m,
                &headcounts,
                tracking.mode,
                &grid,
                dr,
            ),
        ));
    }
    for (name, content) in &writes {
        report::write_atomic(&run_dir.join(name), content).map_err(|e| e.to_string())?;
    }
    info!("wrote {} report files to {}", writes.len(), run_dir.display());
    Ok(ExitCode::SUCCESS)
}
