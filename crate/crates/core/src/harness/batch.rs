//! Seed-parallel batches, aggregation, and file output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{run, Algorithm, RunRecord, SimConfig};

use super::config::ExperimentConfig;

/// Column set of the per-seed CSV files.
pub const SEED_CSV_COLUMNS: [&str; 10] =
    ["seed", "t", "episode", "cost", "regret", "cum_regret", "lambda_min", "theta_err", "ula_steps", "attempts"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeAggregate {
    pub k: usize,
    pub t_start: usize,
    pub mean_lambda_min: f64,
    pub median_lambda_min: f64,
    pub mean_theta_err: f64,
    pub median_theta_err: f64,
    pub mean_ula_steps: f64,
    pub mean_attempts: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub succeeded: Vec<u64>,
    pub failures: Vec<SeedFailure>,
    pub j_star: f64,
    pub t: Vec<usize>,
    pub mean_cum_regret: Vec<f64>,
    pub se_cum_regret: Vec<f64>,
    pub regret_over_sqrt_t: Vec<f64>,
    pub episodes: Vec<EpisodeAggregate>,
    /// Mean over seeds of the ULA iterations actually executed.
    pub mean_ula_steps_total: f64,
    /// Mean over seeds of the iterations the unpreconditioned schedule would
    /// have needed for the same samples.
    pub mean_naive_steps_total: f64,
    pub runs: Vec<RunRecord>,
}

impl AggregateReport {
    /// `R(t)/√t` of the seed-mean regret at the last logged `t ≤ horizon`.
    pub fn normalized_regret_at(&self, horizon: usize) -> Option<f64> {
        let idx = self.t.iter().rposition(|&t| t <= horizon)?;
        Some(self.regret_over_sqrt_t[idx])
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn std_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Runs every seed, in parallel when `parallelism != 1`. `0` means one worker
/// per hardware thread. Results come back in seed-list order.
pub fn run_seeds(
    sim: &SimConfig,
    seeds: &[u64],
    algorithm: Algorithm,
    parallelism: usize,
) -> Vec<(u64, Result<RunRecord>)> {
    let job = |&seed: &u64| (seed, run(sim, seed, algorithm));
    if parallelism == 1 || seeds.len() <= 1 {
        return seeds.iter().map(job).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(pool) => pool.install(|| seeds.par_iter().map(job).collect()),
        Err(_) => seeds.iter().map(job).collect(),
    }
}

/// Aggregates completed runs; failures are carried along but excluded.
pub fn aggregate(
    algorithm: Algorithm,
    seeds: &[u64],
    results: Vec<(u64, Result<RunRecord>)>,
) -> Result<AggregateReport> {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, res) in results {
        match res {
            Ok(rec) => runs.push(rec),
            Err(e) => failures.push(SeedFailure { seed, kind: e.kind().to_string(), message: e.to_string() }),
        }
    }
    if runs.is_empty() {
        return Err(Error::AllSeedsFailed(seeds.len()));
    }
    runs.sort_by_key(|r| r.seed);
    let j_star = runs[0].j_star;

    let len = runs.iter().map(|r| r.rows.len()).min().unwrap_or(0);
    let mut t = Vec::with_capacity(len);
    let mut mean_cum = Vec::with_capacity(len);
    let mut se_cum = Vec::with_capacity(len);
    let mut normalized = Vec::with_capacity(len);
    let mut column = vec![0.0; runs.len()];
    for i in 0..len {
        for (c, r) in column.iter_mut().zip(&runs) {
            *c = r.rows[i].cum_regret;
        }
        let ti = runs[0].rows[i].t;
        let m = mean(&column);
        t.push(ti);
        mean_cum.push(m);
        se_cum.push(std_error(&column));
        normalized.push(m / (ti as f64).sqrt());
    }

    let n_episodes = runs.iter().map(|r| r.episodes.len()).min().unwrap_or(0);
    let episodes = (0..n_episodes)
        .map(|e| {
            let pick = |f: &dyn Fn(&crate::simulator::EpisodeRecord) -> f64| {
                runs.iter().map(|r| f(&r.episodes[e])).collect::<Vec<_>>()
            };
            let lmin = pick(&|ep| ep.lambda_min);
            let err = pick(&|ep| ep.theta_err);
            let first = &runs[0].episodes[e];
            EpisodeAggregate {
                k: first.k,
                t_start: first.t_start,
                mean_lambda_min: mean(&lmin),
                median_lambda_min: median(&lmin),
                mean_theta_err: mean(&err),
                median_theta_err: median(&err),
                mean_ula_steps: mean(&pick(&|ep| ep.ula_steps as f64)),
                mean_attempts: mean(&pick(&|ep| ep.attempts as f64)),
            }
        })
        .collect();

    let executed: Vec<f64> = runs.iter().map(|r| iteration_totals(r, usize::MAX).0).collect();
    let naive: Vec<f64> = runs.iter().map(|r| iteration_totals(r, usize::MAX).1).collect();

    Ok(AggregateReport {
        algorithm,
        seeds: seeds.to_vec(),
        succeeded: runs.iter().map(|r| r.seed).collect(),
        failures,
        j_star,
        t,
        mean_cum_regret: mean_cum,
        se_cum_regret: se_cum,
        regret_over_sqrt_t: normalized,
        episodes,
        mean_ula_steps_total: mean(&executed),
        mean_naive_steps_total: mean(&naive),
        runs,
    })
}

/// `(executed, naive)` ULA iterations over episodes that began by `horizon`.
pub fn iteration_totals(record: &RunRecord, horizon: usize) -> (f64, f64) {
    record
        .episodes
        .iter()
        .filter(|e| e.t_start <= horizon)
        .fold((0.0, 0.0), |(ex, nv), e| {
            (ex + e.ula_steps as f64, nv + e.attempts as f64 * e.naive_steps_per_sample as f64)
        })
}

/// Runs the configured seeds and writes CSVs when `output_dir` is set.
pub fn run_batch(config: &ExperimentConfig, parallelism: usize) -> Result<AggregateReport> {
    if config.seeds.is_empty() {
        return Err(Error::Validation("seeds must be nonempty".into()));
    }
    let sim = config.to_sim()?;
    let results = run_seeds(&sim, &config.seeds, config.algorithm, parallelism);
    let report = aggregate(config.algorithm, &config.seeds, results)?;
    if let Some(dir) = &config.output_dir {
        write_outputs(&report, dir)?;
    }
    Ok(report)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn seed_csv_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.csv"))
}

pub fn write_seed_csv(record: &RunRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SEED_CSV_COLUMNS)?;
    for row in &record.rows {
        w.write_record([
            record.seed.to_string(),
            row.t.to_string(),
            row.episode.to_string(),
            fmt(row.cost),
            fmt(row.regret),
            fmt(row.cum_regret),
            fmt(row.lambda_min),
            fmt(row.theta_err),
            row.ula_steps.to_string(),
            row.attempts.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-seed CSVs plus `aggregate.csv`, `episodes.csv` and `failures.csv`.
pub fn write_outputs(report: &AggregateReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for rec in &report.runs {
        let path = seed_csv_path(dir, rec.seed);
        write_seed_csv(rec, &path)?;
        written.push(path);
    }

    let path = dir.join("aggregate.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["t", "seeds", "mean_cum_regret", "se_cum_regret", "regret_over_sqrt_t"])?;
    for i in 0..report.t.len() {
        w.write_record([
            report.t[i].to_string(),
            report.succeeded.len().to_string(),
            fmt(report.mean_cum_regret[i]),
            fmt(report.se_cum_regret[i]),
            fmt(report.regret_over_sqrt_t[i]),
        ])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("episodes.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "k",
        "t_start",
        "mean_lambda_min",
        "median_lambda_min",
        "mean_theta_err",
        "median_theta_err",
        "mean_ula_steps",
        "mean_attempts",
    ])?;
    for e in &report.episodes {
        w.write_record([
            e.k.to_string(),
            e.t_start.to_string(),
            fmt(e.mean_lambda_min),
            fmt(e.median_lambda_min),
            fmt(e.mean_theta_err),
            fmt(e.median_theta_err),
            fmt(e.mean_ula_steps),
            fmt(e.mean_attempts),
        ])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("failures.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["seed", "kind", "message"])?;
    for f in &report.failures {
        w.write_record([f.seed.to_string(), f.kind.clone(), f.message.clone()])?;
    }
    w.flush()?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub horizon: usize,
    pub preconditioned: f64,
    pub naive: f64,
    pub ratio: f64,
}

/// Cumulative executed vs. counterfactual naive ULA iterations at each
/// horizon, averaged over the configured seeds. One batch is run to the
/// largest horizon and read off at the smaller ones.
pub fn compare_iteration_counts(
    config: &ExperimentConfig,
    horizons: &[usize],
    parallelism: usize,
) -> Result<Vec<IterationRow>> {
    if horizons.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Validation("horizons must be ascending".into()));
    }
    if config.algorithm != Algorithm::Tsld {
        return Err(Error::Validation("iteration counts need the Langevin sampler".into()));
    }
    let horizons: Vec<usize> = horizons.iter().copied().filter(|&h| h > 0).collect();
    let Some(&max_h) = horizons.last() else { return Ok(Vec::new()) };
    let mut cfg = config.clone();
    cfg.horizon = max_h;
    cfg.output_dir = None;
    let report = run_batch(&cfg, parallelism)?;
    Ok(horizons
        .iter()
        .map(|&h| {
            let (ex, nv): (Vec<f64>, Vec<f64>) = report.runs.iter().map(|r| iteration_totals(r, h)).unzip();
            let (preconditioned, naive) = (mean(&ex), mean(&nv));
            IterationRow { horizon: h, preconditioned, naive, ratio: naive / preconditioned }
        })
        .collect())
}

pub fn write_iteration_table(rows: &[IterationRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["horizon", "preconditioned", "naive", "ratio"])?;
    for r in rows {
        w.write_record([r.horizon.to_string(), fmt(r.preconditioned), fmt(r.naive), fmt(r.ratio)])?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column `t value` files for regret, regret/√t, λ_min and parameter
/// error, plus a rendering recipe.
pub fn emit_plots(report: &AggregateReport, outdir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir)?;
    let series: [(&str, Vec<(usize, f64)>); 4] = [
        ("regret.dat", report.t.iter().copied().zip(report.mean_cum_regret.iter().copied()).collect()),
        ("regret_sqrt_t.dat", report.t.iter().copied().zip(report.regret_over_sqrt_t.iter().copied()).collect()),
        ("lambda_min.dat", report.episodes.iter().map(|e| (e.t_start, e.mean_lambda_min)).collect()),
        ("theta_err.dat", report.episodes.iter().map(|e| (e.t_start, e.mean_theta_err)).collect()),
    ];
    let mut written = Vec::new();
    for (name, points) in &series {
        let path = outdir.join(name);
        let mut f = BufWriter::new(File::create(&path)?);
        for (t, v) in points {
            writeln!(f, "{t} {v}")?;
        }
        f.flush()?;
        written.push(path);
    }
    let recipe = outdir.join("recipe.txt");
    fs::write(
        &recipe,
        "Each .dat file holds whitespace-separated columns: t value.\n\
         \n\
         regret.dat         seed-mean cumulative regret R(t)\n\
         regret_sqrt_t.dat  R(t)/sqrt(t)\n\
         lambda_min.dat     seed-mean smallest preconditioner eigenvalue at each episode start\n\
         theta_err.dat      seed-mean |theta_tilde - theta_star| at each episode start\n\
         \n\
         gnuplot:\n\
         \x20 set terminal pngcairo size 900,600\n\
         \x20 set output 'regret.png'\n\
         \x20 set xlabel 't'\n\
         \x20 plot 'regret.dat' using 1:2 with lines title 'R(t)', \\\n\
         \x20      'regret_sqrt_t.dat' using 1:2 with lines axes x1y2 title 'R(t)/sqrt(t)'\n\
         \n\
         matplotlib:\n\
         \x20 import numpy as np, matplotlib.pyplot as plt\n\
         \x20 t, v = np.loadtxt('regret.dat', unpack=True); plt.plot(t, v); plt.savefig('regret.png')\n",
    )?;
    written.push(recipe);
    Ok(written)
}
