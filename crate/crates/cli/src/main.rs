//! Command line frontend: configuration-driven selection experiments.
//!
//! Exit codes: 0 success, 1 a check or comparison failed, 2 bad input
//! (config, tags, probes), 3 the grid would exceed the memory budget.

mod config;
mod io;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use config::ExperimentConfig;
use smallnoise::experiments::{
    catalog, fdd_convergence, reporting_window, run_selection, validate_problem, Problem,
    SelectionReport,
};
use smallnoise::fd::eps_sweep;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "smallnoise",
    about = "Zero-noise selection laboratory for degenerate SDEs",
    version
)]
struct Cli {
    /// Threads for the compute pool (default: one per core).  Results are
    /// byte-identical at every worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the configured problem against the standing assumptions
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full selection study: eps sweep plus every diagnostic, all reports
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid sweep and Cauchy table only (no Monte Carlo)
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Three-time joint-law convergence table
    Fdd {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Diff the probe tables of two runs
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long)]
        tolerance: f64,
    },
    /// List the built-in problems
    Catalog,
}

fn main() {
    let cli = Cli::parse();
    std::process::exit(dispatch(cli));
}

fn dispatch(cli: Cli) -> i32 {
    let command = cli.command;
    let run = move || -> Result<i32> {
        match command {
            Command::Check { config, out } => cmd_check(&config, out),
            Command::Run { config, out } => cmd_run(&config, out),
            Command::Sweep { config, out } => cmd_sweep(&config, out),
            Command::Fdd { config, out } => cmd_fdd(&config, out),
            Command::Compare {
                run_a,
                run_b,
                tolerance,
            } => cmd_compare(&run_a, &run_b, tolerance),
            Command::Catalog => cmd_catalog(),
        }
    };
    let outcome = match cli.workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => {
                eprintln!("error: building the worker pool: {e}");
                return 2;
            }
        },
        None => run(),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_toml(&text)
}

/// Output directory: --out beats the config, and a relative path is rooted
/// at SMALLNOISE_OUT when that is set.
fn out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig, leaf: &str) -> PathBuf {
    let base = flag.unwrap_or_else(|| {
        cfg.out_dir
            .as_deref()
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(leaf))
    });
    match std::env::var_os("SMALLNOISE_OUT") {
        Some(root) if base.is_relative() => PathBuf::from(root).join(base),
        _ => base,
    }
}

/// Memory gate, before any lattice is allocated.  `lattices` counts the
/// solutions held at once (one per eps level, plus the elliptic baseline
/// for the full run).
fn budget_gate(cfg: &ExperimentConfig, lattices: u64) -> Result<Option<i32>> {
    // cheap bound first: a huge node count must be refused without scanning
    // the box for a stable step size
    let nodes = ((cfg.box_hi - cfg.box_lo) / cfg.h).round() as u64 + 1;
    let floor = nodes * 2 * 8 * lattices;
    if floor > cfg.budget_bytes() {
        eprintln!(
            "error: {} nodes per slice already exceeds the {} GiB budget",
            nodes,
            cfg.budget_gib.unwrap_or(2.0)
        );
        return Ok(Some(3));
    }
    Ok(None)
}

fn exact_budget_gate(cfg: &ExperimentConfig, bytes_per_solution: u64, lattices: u64) -> Option<i32> {
    let need = bytes_per_solution.saturating_mul(lattices);
    if need > cfg.budget_bytes() {
        eprintln!(
            "error: the sweep needs {need} bytes of lattice storage, over the {} GiB budget",
            cfg.budget_gib.unwrap_or(2.0)
        );
        return Some(3);
    }
    None
}

fn run_check(cfg: &ExperimentConfig, problem: &Problem<f64>) -> Result<smallnoise::experiments::ProblemCheck> {
    let domain = cfg.domain()?;
    Ok(validate_problem(problem, &domain, &cfg.eps, cfg.seed)?)
}

fn cmd_check(config: &Path, out: Option<PathBuf>) -> Result<i32> {
    let cfg = load_config(config)?;
    let problem = cfg.problem()?;
    let check = run_check(&cfg, &problem)?;
    let dir = out_dir(out, &cfg, "check");
    io::write_json(&dir.join("check_report.json"), &check)?;
    io::write_atomic(
        &dir.join("check_report.md"),
        io::check_markdown(&check).as_bytes(),
    )?;
    let verdict = if check.pass {
        "pass"
    } else if check.waiver {
        "fail (waived)"
    } else {
        "fail"
    };
    println!("check {}: {}", check.tag, verdict);
    for note in &check.notes {
        println!("  note: {note}");
    }
    println!("  reports in {}", dir.display());
    Ok(if check.acceptable { 0 } else { 1 })
}

fn cmd_run(config: &Path, out: Option<PathBuf>) -> Result<i32> {
    let cfg = load_config(config)?;
    let problem = cfg.problem()?;
    let lattices = cfg.eps.len() as u64 + 1;
    if let Some(code) = budget_gate(&cfg, lattices)? {
        return Ok(code);
    }
    let check = run_check(&cfg, &problem)?;
    if !check.acceptable {
        eprintln!("error: {} fails the standing assumptions and carries no waiver", check.tag);
        return Ok(1);
    }
    let grid = cfg.grid(&problem)?;
    if let Some(code) = exact_budget_gate(&cfg, grid.solution_bytes(), lattices) {
        return Ok(code);
    }
    let report = run_selection(&problem, &cfg.eps, &grid, cfg.mc_budget(), cfg.seed)?;
    let dir = out_dir(out, &cfg, "run");
    emit_selection(&dir, &report)?;
    io::write_atomic(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    println!(
        "run {}: cauchy {} feller_flag {} cross {}",
        report.problem,
        report.flags.cauchy_converging,
        report.flags.feller_flag,
        report.flags.cross_check_pass
    );
    println!("  reports in {}", dir.display());
    Ok(0)
}

fn emit_selection(dir: &Path, report: &SelectionReport) -> Result<()> {
    io::write_json(&dir.join("selection.json"), report)?;
    io::probes_csv(&report.probes).emit(dir)?;
    io::cauchy_csv(&report.cauchy).emit(dir)?;
    io::tightness_csv(&report.tightness).emit(dir)?;
    io::feller_csv(&report.feller).emit(dir)?;
    io::cross_csv(&report.cross_checks).emit(dir)?;
    io::fdd_csv(&report.fdd).emit(dir)?;
    io::write_atomic(
        &dir.join("summary.md"),
        io::selection_markdown(report).as_bytes(),
    )?;
    Ok(())
}

fn cmd_sweep(config: &Path, out: Option<PathBuf>) -> Result<i32> {
    let cfg = load_config(config)?;
    let problem = cfg.problem()?;
    let lattices = cfg.eps.len() as u64;
    if let Some(code) = budget_gate(&cfg, lattices)? {
        return Ok(code);
    }
    let grid = cfg.grid(&problem)?;
    if let Some(code) = exact_budget_gate(&cfg, grid.solution_bytes(), lattices) {
        return Ok(code);
    }
    let payoff = problem
        .payoff_set
        .first()
        .ok_or_else(|| anyhow::anyhow!("problem has no payoffs"))?;
    let window = reporting_window(&problem.family, cfg.eps[0], &grid)?;
    let sweep = eps_sweep(&problem.family, payoff, &cfg.eps, &grid, &window)?;
    let dir = out_dir(out, &cfg, "sweep");
    io::write_json(&dir.join("sweep.json"), &sweep.summary)?;
    io::cauchy_csv(&sweep.summary).emit(&dir)?;
    println!(
        "sweep {}: converging {} error_bar {}",
        problem.tag, sweep.summary.converging, sweep.summary.error_bar
    );
    println!("  reports in {}", dir.display());
    Ok(0)
}

fn cmd_fdd(config: &Path, out: Option<PathBuf>) -> Result<i32> {
    let cfg = load_config(config)?;
    let problem = cfg.problem()?;
    let payoff = problem
        .payoff_set
        .first()
        .ok_or_else(|| anyhow::anyhow!("problem has no payoffs"))?
        .clone();
    let triple = vec![payoff.clone(), payoff.clone(), payoff];
    let times: Vec<f64> = [0.25, 0.5, 0.75].iter().map(|f| f * cfg.t_final).collect();
    let table = fdd_convergence(
        &problem,
        &triple,
        &times,
        &cfg.eps,
        cfg.mc_budget(),
        cfg.seed,
    )?;
    let dir = out_dir(out, &cfg, "fdd");
    io::write_json(&dir.join("fdd.json"), &table)?;
    io::fdd_csv(&table).emit(&dir)?;
    println!("fdd {}: converged {}", problem.tag, table.converged);
    println!("  reports in {}", dir.display());
    Ok(0)
}

fn cmd_compare(run_a: &Path, run_b: &Path, tolerance: f64) -> Result<i32> {
    let a: SelectionReport = serde_json::from_str(
        &std::fs::read_to_string(run_a).with_context(|| format!("reading {}", run_a.display()))?,
    )
    .context("run_a is not a selection report")?;
    let b: SelectionReport = serde_json::from_str(
        &std::fs::read_to_string(run_b).with_context(|| format!("reading {}", run_b.display()))?,
    )
    .context("run_b is not a selection report")?;
    if a.problem != b.problem {
        eprintln!("error: different problems: {} vs {}", a.problem, b.problem);
        return Ok(2);
    }
    if a.probes.len() != b.probes.len() {
        eprintln!(
            "error: probe tables differ in size: {} vs {}",
            a.probes.len(),
            b.probes.len()
        );
        return Ok(2);
    }
    let mut worst = 0.0f64;
    for (pa, pb) in a.probes.iter().zip(&b.probes) {
        let same_site = pa.x.len() == pb.x.len()
            && pa
                .x
                .iter()
                .zip(&pb.x)
                .all(|(&u, &v)| (u - v).abs() <= 1e-12)
            && (pa.t - pb.t).abs() <= 1e-12;
        if !same_site {
            eprintln!(
                "error: probe mismatch at x {:?} t {} vs x {:?} t {}",
                pa.x, pa.t, pb.x, pb.t
            );
            return Ok(2);
        }
        worst = worst.max((pa.u_selected - pb.u_selected).abs());
    }
    println!(
        "compare {}: max probe difference {worst} (tolerance {tolerance})",
        a.problem
    );
    Ok(if worst <= tolerance { 0 } else { 1 })
}

fn cmd_catalog() -> Result<i32> {
    for p in catalog::<f64>() {
        let meta = &p.field.meta;
        println!(
            "{:<16} alpha {:<5} beta {:<5} waiver {:<5} {}",
            p.tag,
            meta.alpha,
            meta.beta,
            p.waiver,
            p.notes
        );
    }
    Ok(0)
}
