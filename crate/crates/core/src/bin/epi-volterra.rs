use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use epi_volterra::abm::Model;
use epi_volterra::analysis::{sis_equilibrium, verify_equilibrium, EquilibriumComparison, EquilibriumReport};
use epi_volterra::config::ExperimentConfig;
use epi_volterra::export::{self, Provenance, Writer};
use epi_volterra::harness::{self, run_checks, run_convergence, run_martingale};
use epi_volterra::limit_solver::{final_size, solve, FinalSize, LimitSolution};
use epi_volterra::pde::{aggregate_from_density, boundary_condition_check, jump_consistency, transport_residual};
use epi_volterra::{Error, Result};

#[derive(Parser)]
#[command(name = "epi-volterra", version, about = "Random-infectivity epidemic models: simulation, limit and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run stochastic replications and export scaled trajectories.
    Simulate(Common),
    /// Solve the deterministic limit and export its series.
    Limit(Common),
    /// Build the age-density grid and run the PDE checks.
    Pde(Common),
    /// Report R0 and the SIS endemic equilibrium.
    Equilibrium(Common),
    /// Measure the distance between simulations and the limit along a population ladder.
    Converge(Common),
    /// Run the invariant battery. Exits 1 if any check fails.
    Check(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent replications (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::from_path(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output = out.clone();
        }
        Ok(cfg)
    }
}

fn writer(cfg: &ExperimentConfig) -> Result<Writer> {
    let prov = Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    Writer::new(&cfg.output, prov)
}

#[derive(Serialize)]
struct SimulationSummary {
    replication: usize,
    population: u64,
    events: u64,
    proposals: u64,
    accepted: u64,
    conservation_violations: u64,
    final_s: f64,
    final_i: f64,
    final_r: f64,
}

fn simulate(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Writer> {
    let pool = harness::pool(jobs)?;
    let trajs = harness::run_replications(cfg, cfg.simulation.population, 0, cfg.simulation.replications, &pool)?;
    let mut w = writer(cfg)?;
    let mut summary = Vec::new();
    for (r, traj) in trajs.iter().enumerate() {
        w.text(&format!("trajectory_r{r}.csv"), &export::trajectory_csv(traj, &w.provenance))?;
        if !traj.age_profiles.is_empty() {
            let body = export::matrix_csv(&traj.times(), &traj.age_edges, &traj.age_profiles, &w.provenance);
            w.text(&format!("age_r{r}.csv"), &body)?;
        }
        if cfg.simulation.record_events {
            w.text(&format!("events_r{r}.csv"), &export::events_csv(&traj.events, &w.provenance))?;
        }
        let last = traj.final_record();
        summary.push(SimulationSummary {
            replication: r,
            population: traj.population,
            events: traj.event_count,
            proposals: traj.proposals,
            accepted: traj.accepted,
            conservation_violations: traj.conservation_violations,
            final_s: last.s,
            final_i: last.i,
            final_r: last.r,
        });
    }
    w.json("summary.json", &summary)?;
    Ok(w)
}

#[derive(Serialize)]
struct LimitSummary {
    steps: usize,
    dt: f64,
    iterations: usize,
    max_disagreement: f64,
    mass_defect: f64,
    r0: f64,
    final_size: Option<FinalSize>,
    final_size_note: Option<String>,
}

fn record_indices(cfg: &ExperimentConfig, sol: &LimitSolution) -> Vec<usize> {
    cfg.sim_config(cfg.simulation.population)
        .record_times()
        .iter()
        .map(|t| ((t / sol.dt).round() as usize).min(sol.steps()))
        .collect()
}

fn limit(cfg: &ExperimentConfig) -> Result<Writer> {
    let sol = solve(&cfg.limit_config())?;
    let mut w = writer(cfg)?;
    let idx = record_indices(cfg, &sol);
    w.text("limit.csv", &export::limit_csv(&sol, &idx, &w.provenance))?;
    if cfg.simulation.age_bin.is_some() {
        let edges = cfg.sim_config(cfg.simulation.population).age_edges();
        let times: Vec<f64> = idx.iter().map(|&n| sol.times[n]).collect();
        let rows: Vec<Vec<f64>> = idx.iter().map(|&n| sol.cumulative_at_edges(n, &edges)).collect();
        w.text("limit_age.csv", &export::matrix_csv(&times, &edges, &rows, &w.provenance))?;
    }
    let (fs, note) = if sol.model == Model::Sir {
        match final_size(&sol, cfg.limit.final_size_cutoff) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("final size applies to SIR only".to_string()))
    };
    let summary = LimitSummary {
        steps: sol.steps(),
        dt: sol.dt,
        iterations: sol.iterations,
        max_disagreement: sol.max_disagreement,
        mass_defect: sol.mass_defect(),
        r0: epi_volterra::analysis::r0(&cfg.law),
        final_size: fs,
        final_size_note: note,
    };
    w.json("limit_summary.json", &summary)?;
    Ok(w)
}

#[derive(Serialize)]
struct PdeSummary {
    rows: Vec<usize>,
    columns: usize,
    transport_residual: Option<epi_volterra::pde::MaxReport>,
    jump_consistency: Option<epi_volterra::pde::JumpReport>,
    boundary_condition: epi_volterra::pde::MaxReport,
    aggregate_max_error: f64,
    notes: Vec<String>,
}

fn pde(cfg: &ExperimentConfig) -> Result<Writer> {
    let sol = solve(&cfg.limit_config())?;
    let grid = harness::density_grid(cfg, &sol);
    let mut notes = Vec::new();
    let transport = transport_residual(&grid).map_err(|e| notes.push(e.to_string())).ok();
    let jumps = jump_consistency(&grid).map_err(|e| notes.push(e.to_string())).ok();
    let agg = aggregate_from_density(&grid, &cfg.law);
    let aggregate_max_error = grid
        .rows
        .iter()
        .zip(&agg)
        .map(|(&n, a)| (a - sol.curly_i[n]).abs())
        .fold(0.0, f64::max);
    let summary = PdeSummary {
        rows: grid.rows.clone(),
        columns: grid.columns,
        transport_residual: transport,
        jump_consistency: jumps,
        boundary_condition: boundary_condition_check(&grid, &sol.s, &cfg.law),
        aggregate_max_error,
        notes,
    };
    let mut w = writer(cfg)?;
    let col_stride = (grid.columns / 500).max(1);
    w.text("density.csv", &export::density_csv(&grid, col_stride, &w.provenance))?;
    w.json("pde_report.json", &summary)?;
    Ok(w)
}

#[derive(Serialize)]
struct EquilibriumOutput {
    equilibrium: EquilibriumReport,
    comparison: Option<EquilibriumComparison>,
    note: Option<String>,
}

fn equilibrium(cfg: &ExperimentConfig) -> Result<Writer> {
    let report = sis_equilibrium(&cfg.law, cfg.limit.dt)?;
    let (comparison, note) = if cfg.model == Model::Sis {
        let sol = solve(&cfg.limit_config())?;
        match verify_equilibrium(&report, &sol, None) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("comparison with a solved trajectory needs model = sis".to_string()))
    };
    let mut w = writer(cfg)?;
    w.json(
        "equilibrium.json",
        &EquilibriumOutput {
            equilibrium: report,
            comparison,
            note,
        },
    )?;
    Ok(w)
}

fn converge(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Writer> {
    let (table, _) = run_convergence(cfg, jobs)?;
    let mut w = writer(cfg)?;
    w.text("convergence.csv", &export::convergence_csv(&table, &w.provenance))?;
    w.json("convergence.json", &table)?;
    if cfg.martingale.is_some() {
        w.json("martingale.json", &run_martingale(cfg, jobs)?)?;
    }
    Ok(w)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::ConfigInvalid(_) | Error::Parse { .. } => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<u8> {
    let (common, command) = match &cli.command {
        Command::Simulate(c) => (c, "simulate"),
        Command::Limit(c) => (c, "limit"),
        Command::Pde(c) => (c, "pde"),
        Command::Equilibrium(c) => (c, "equilibrium"),
        Command::Converge(c) => (c, "converge"),
        Command::Check(c) => (c, "check"),
    };
    let cfg = match common.load() {
        Ok(cfg) => cfg,
        Err(e @ Error::Io { .. }) => return Err(Error::ConfigInvalid(e.to_string())),
        Err(e) => return Err(e),
    };
    log::info!("{command}: config hash {}, seed {}", cfg.hash(), cfg.seed);
    let jobs = common.jobs;
    let mut code = 0;
    let w = match &cli.command {
        Command::Simulate(_) => simulate(&cfg, jobs)?,
        Command::Limit(_) => limit(&cfg)?,
        Command::Pde(_) => pde(&cfg)?,
        Command::Equilibrium(_) => equilibrium(&cfg)?,
        Command::Converge(_) => converge(&cfg, jobs)?,
        Command::Check(_) => {
            let report = run_checks(&cfg, jobs);
            for e in &report.entries {
                log::info!("{} {:?} {:?} {:?} {}", e.name, e.status, e.value, e.threshold, e.note);
            }
            for e in report.failures() {
                eprintln!("FAIL {}: value {:?} threshold {:?} {}", e.name, e.value, e.threshold, e.note);
            }
            if !report.passed() {
                code = 1;
            }
            let mut w = writer(&cfg)?;
            w.json("checks.json", &report)?;
            w
        }
    };
    for path in &w.written {
        println!("{}", path.display());
    }
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EPI_VOLTERRA_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
