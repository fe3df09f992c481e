use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tsld_core::harness::batch::{write_iteration_table, write_outputs};
use tsld_core::harness::{compare_iteration_counts, emit_plots, load_config, run_batch, selftest, ExperimentConfig};
use tsld_core::lqr::{in_admissible_set, solve_riccati, spectral_norm, spectral_radius, DEFAULT_RICCATI_MAX_ITER, DEFAULT_RICCATI_TOL};
use tsld_core::{Algorithm, Error};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_SELFTEST: u8 = 3;

#[derive(Parser)]
#[command(name = "tsld", version, about = "Thompson sampling with Langevin dynamics for online LQR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Tsld,
    Psrl,
}

#[derive(clap::Args)]
struct BatchArgs {
    /// Seeds as a comma list (`0,1,2`) or half-open range (`0..10`); overrides the config.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every hardware thread.
    #[arg(long, default_value_t = 0)]
    parallel: usize,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed and write per-seed CSVs, aggregates and plot data.
    Run {
        config: PathBuf,
        #[command(flatten)]
        batch: BatchArgs,
    },
    /// Executed vs. naive ULA iteration counts at several horizons.
    CompareIters {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "500,1000,1500,2000")]
        horizons: Vec<usize>,
        #[command(flatten)]
        batch: BatchArgs,
    },
    /// Solve the Riccati equation for the true system and report diagnostics.
    RiccatiCheck { config: PathBuf },
    /// Run the fast property checks.
    Selftest,
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    parse_seed_list(s).map(Seeds)
}

fn parse_seed_list(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("bad range start: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("bad range end: {e}"))?;
        if a >= b {
            return Err(format!("empty seed range {a}..{b}"));
        }
        return Ok((a..b).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|e| format!("bad seed {p:?}: {e}")))
        .collect()
}

fn load(path: &Path, batch: Option<&BatchArgs>) -> Result<ExperimentConfig, Error> {
    let mut cfg = load_config(path)?;
    if let Some(b) = batch {
        if let Some(seeds) = &b.seeds {
            cfg.seeds = seeds.0.clone();
        }
        if let Some(out) = &b.out {
            cfg.output_dir = Some(out.clone());
        }
        if let Some(alg) = b.algorithm {
            cfg.algorithm = match alg {
                AlgorithmArg::Tsld => Algorithm::Tsld,
                AlgorithmArg::Psrl => Algorithm::Psrl,
            };
        }
    }
    Ok(cfg)
}

fn config_error(e: &Error) -> bool {
    matches!(e, Error::Parse(_) | Error::Validation(_) | Error::Io(_) | Error::CalibrationFailure(_) | Error::ReservoirEmpty)
}

fn fail(e: Error, config_stage: bool) -> ExitCode {
    eprintln!("error [{}]: {e}", e.kind());
    if config_stage && config_error(&e) {
        ExitCode::from(EXIT_CONFIG)
    } else {
        ExitCode::from(EXIT_RUNTIME)
    }
}

fn cmd_run(path: &Path, batch: &BatchArgs) -> ExitCode {
    let mut cfg = match load(path, Some(batch)).and_then(|c| c.to_sim().map(|_| c)) {
        Ok(c) => c,
        Err(e) => return fail(e, true),
    };
    let out = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("tsld-out"));
    cfg.output_dir = None;
    let report = match run_batch(&cfg, batch.parallel) {
        Ok(r) => r,
        Err(e) => return fail(e, false),
    };
    let written = write_outputs(&report, &out).and_then(|mut w| {
        w.extend(emit_plots(&report, &out.join("plots"))?);
        Ok(w)
    });
    if let Err(e) = written {
        return fail(e, false);
    }
    println!("algorithm       {}", report.algorithm.name());
    println!("seeds           {} succeeded, {} failed", report.succeeded.len(), report.failures.len());
    for f in &report.failures {
        println!("  seed {} failed: {} ({})", f.seed, f.kind, f.message);
    }
    println!("J(theta*)       {:.6}", report.j_star);
    if let (Some(&t), Some(&r), Some(&n)) =
        (report.t.last(), report.mean_cum_regret.last(), report.regret_over_sqrt_t.last())
    {
        println!("R({t})          {r:.4}");
        println!("R({t})/sqrt(t)  {n:.4}");
    }
    if report.algorithm == Algorithm::Tsld {
        println!("ULA steps       {:.0} per seed (naive schedule: {:.3e})", report.mean_ula_steps_total, report.mean_naive_steps_total);
    }
    println!("output          {}", out.display());
    ExitCode::SUCCESS
}

fn cmd_compare(path: &Path, horizons: &[usize], batch: &BatchArgs) -> ExitCode {
    let cfg = match load(path, Some(batch)).and_then(|c| c.to_sim().map(|_| c)) {
        Ok(c) => c,
        Err(e) => return fail(e, true),
    };
    let rows = match compare_iteration_counts(&cfg, horizons, batch.parallel) {
        Ok(r) => r,
        Err(e) => {
            let config_stage = matches!(e, Error::Validation(_));
            return fail(e, config_stage);
        }
    };
    println!("{:>8} {:>16} {:>16} {:>10}", "T", "preconditioned", "naive", "ratio");
    for r in &rows {
        println!("{:>8} {:>16.4e} {:>16.4e} {:>10.2}", r.horizon, r.preconditioned, r.naive, r.ratio);
    }
    if let Some(dir) = &cfg.output_dir {
        let res = std::fs::create_dir_all(dir)
            .map_err(Error::from)
            .and_then(|_| write_iteration_table(&rows, &dir.join("iterations.csv")));
        if let Err(e) = res {
            return fail(e, false);
        }
    }
    ExitCode::SUCCESS
}

fn cmd_riccati(path: &Path) -> ExitCode {
    let sim = match load(path, None).and_then(|c| c.to_sim()) {
        Ok(v) => v,
        Err(e) => return fail(e, true),
    };
    let sol = match solve_riccati(&sim.system, &sim.cost, DEFAULT_RICCATI_TOL, DEFAULT_RICCATI_MAX_ITER) {
        Ok(s) => s,
        Err(e) => return fail(e, false),
    };
    let closed = sim.system.closed_loop(&sol.k);
    let membership = in_admissible_set(&sim.system, &sim.admissible, sim.noise.covariance());
    println!("iterations      {}", sol.iterations);
    println!("residual        {:.3e}", sol.residual);
    println!("spectral radius {:.4}", spectral_radius(&closed));
    println!("spectral norm   {:.4}", spectral_norm(&closed));
    println!("J(theta*)       {:.6}", tsld_core::average_cost(&sol.p_star, sim.noise.covariance()));
    println!("in admissible   {}", membership.admitted);
    println!("P* = {:.6}", sol.p_star);
    println!("K = {:.6}", sol.k);
    ExitCode::SUCCESS
}

fn cmd_selftest() -> ExitCode {
    let checks = selftest();
    let mut ok = true;
    for c in &checks {
        println!("{} {:<24} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_SELFTEST)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { config, batch } => cmd_run(config, batch),
        Command::CompareIters { config, horizons, batch } => cmd_compare(config, horizons, batch),
        Command::RiccatiCheck { config } => cmd_riccati(config),
        Command::Selftest => cmd_selftest(),
    }
}
