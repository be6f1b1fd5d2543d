use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use corridor_advisory::cloud::LatencyProfile;
use corridor_advisory::scenario::io::{read_json, write_comparison, write_csv, write_json, write_run};
use corridor_advisory::scenario::{compare, run_scenario, Comparison, LatencySummary, Mode, RunOutput, ScenarioConfig};
use corridor_advisory::traffic::DensityClass;

#[derive(Parser)]
#[command(name = "cvadvise", version, about = "Cloud speed advisories on a signalized corridor")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config and print its resolved form and hash.
    Validate(Common),
    /// Simulate one mode and write its logs.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "advised")]
        mode: Mode,
    },
    /// Paired baseline and advised runs with MoE and latency reports.
    Compare(Common),
    /// Every (density, seed) cell of the config's sweep section, both modes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Concurrent runs (defaults to the number of cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario TOML, or a run manifest written by an earlier invocation.
    #[arg(long)]
    config: PathBuf,
    /// Demand seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's output_dir, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Vehicles per advisory module.
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long)]
    latency_profile: Option<LatencyProfile>,
}

/// Everything needed to repeat an invocation.
#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    command: String,
    modes: Vec<Mode>,
    density: DensityClass,
    seed: u64,
    config_hash: String,
    config: String,
    outputs: Vec<String>,
}

fn load_config(c: &Common) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(&c.config).with_context(|| format!("reading {}", c.config.display()))?;
    let mut cfg = if c.config.extension().is_some_and(|e| e == "json") {
        let m: Manifest = read_json(&c.config)?;
        ScenarioConfig::from_toml(&m.config)
    } else {
        ScenarioConfig::from_toml(&text)
    }
    .with_context(|| format!("in {}", c.config.display()))?;
    if let Some(seed) = c.seed {
        cfg.demand.seed = seed;
        cfg.sweep.seeds = vec![seed];
    }
    if let Some(cap) = c.capacity {
        cfg.cloud.module_capacity = cap;
    }
    if let Some(p) = c.latency_profile {
        cfg.latency.profile = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: &ScenarioConfig) -> PathBuf {
    c.out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn files_in(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    Ok(names)
}

fn write_manifest(dir: &Path, command: &str, modes: Vec<Mode>, cfg: &ScenarioConfig) -> Result<()> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        modes,
        density: cfg.demand.density,
        seed: cfg.demand.seed,
        config_hash: cfg.hash(),
        config: cfg.to_toml(),
        outputs: files_in(dir)?,
    };
    write_json(&dir.join("manifest.json"), &m)?;
    Ok(())
}

fn print_comparison(c: &Comparison) {
    let m = &c.moe;
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.1}%"));
    println!(
        "{} seed {}: stopped delay {:.1} -> {:.1} s ({}), travel time {:.1} -> {:.1} s ({}), TIT {:.2} -> {:.2} ({})",
        m.density,
        m.seed,
        m.baseline.mean_stopped_delay,
        m.advised.mean_stopped_delay,
        pct(m.stopped_delay_reduction_pct),
        m.baseline.mean_travel_time,
        m.advised.mean_travel_time,
        pct(m.travel_time_reduction_pct),
        m.baseline.tit,
        m.advised.tit,
        pct(m.tit_reduction_pct),
    );
    println!(
        "  end-to-end delay mean {:.1} ms, median {:.1} ms, max {:.1} ms, over 1000 ms {:.2}%",
        c.latency.mean_ms,
        c.latency.median_ms,
        c.latency.max_ms,
        100.0 * c.latency.fraction_over_budget
    );
}

fn cmd_run(common: &Common, mode: Mode) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg);
    let run = run_scenario(&cfg, mode)?;
    write_run(&dir, &run)?;
    write_manifest(&dir, "run", vec![mode], &cfg)?;
    eprintln!("{} rows, {} deliveries -> {}", run.trajectory.rows.len(), run.latency.len(), dir.display());
    Ok(())
}

fn compare_cell(cfg: &ScenarioConfig, dir: &Path, b: &RunOutput, a: &RunOutput) -> Result<Comparison> {
    write_run(dir, b)?;
    write_run(dir, a)?;
    let c = compare(cfg, b, a)?;
    write_comparison(dir, std::slice::from_ref(&c))?;
    write_manifest(dir, "compare", vec![Mode::Baseline, Mode::Advised], cfg)?;
    Ok(c)
}

fn cmd_compare(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg);
    let b = run_scenario(&cfg, Mode::Baseline)?;
    let a = run_scenario(&cfg, Mode::Advised)?;
    let c = compare_cell(&cfg, &dir, &b, &a)?;
    print_comparison(&c);
    Ok(())
}

/// One row per density, averaged over seeds.
#[derive(Debug, Serialize)]
struct ReductionRow {
    density: DensityClass,
    seeds: usize,
    stopped_delay_reduction_pct: Option<f64>,
    travel_time_reduction_pct: Option<f64>,
    tit_reduction_pct: Option<f64>,
}

#[derive(Debug, Serialize)]
struct LatencyRow {
    density: DensityClass,
    seeds: usize,
    deliveries: usize,
    mean_ms: f64,
    median_ms: f64,
    p95_ms: f64,
    max_ms: f64,
    fraction_over_budget: f64,
    mean_processing_ms: f64,
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = v.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn density_tables(cells: &[Comparison]) -> (Vec<ReductionRow>, Vec<LatencyRow>) {
    let mut densities: Vec<DensityClass> = cells.iter().map(|c| c.moe.density).collect();
    densities.sort_by_key(|d| d.flow() as i64);
    densities.dedup();
    let mut red = Vec::new();
    let mut lat = Vec::new();
    for d in densities {
        let group: Vec<&Comparison> = cells.iter().filter(|c| c.moe.density == d).collect();
        red.push(ReductionRow {
            density: d,
            seeds: group.len(),
            stopped_delay_reduction_pct: mean_opt(group.iter().map(|c| c.moe.stopped_delay_reduction_pct)),
            travel_time_reduction_pct: mean_opt(group.iter().map(|c| c.moe.travel_time_reduction_pct)),
            tit_reduction_pct: mean_opt(group.iter().map(|c| c.moe.tit_reduction_pct)),
        });
        let ls: Vec<&LatencySummary> = group.iter().map(|c| &c.latency).collect();
        let n: usize = ls.iter().map(|l| l.deliveries).sum();
        let weighted = |f: fn(&LatencySummary) -> f64| ls.iter().map(|l| f(l) * l.deliveries as f64).sum::<f64>() / n as f64;
        let avg = |f: fn(&LatencySummary) -> f64| ls.iter().map(|l| f(l)).sum::<f64>() / ls.len() as f64;
        lat.push(LatencyRow {
            density: d,
            seeds: group.len(),
            deliveries: n,
            mean_ms: weighted(|l| l.mean_ms),
            median_ms: avg(|l| l.median_ms),
            p95_ms: avg(|l| l.p95_ms),
            max_ms: ls.iter().map(|l| l.max_ms).fold(f64::NEG_INFINITY, f64::max),
            fraction_over_budget: weighted(|l| l.fraction_over_budget),
            mean_processing_ms: weighted(|l| l.mean_processing_ms),
        });
    }
    (red, lat)
}

#[derive(Debug, Serialize)]
struct CellFailure {
    density: DensityClass,
    seed: u64,
    mode: Option<Mode>,
    error: String,
}

fn cmd_sweep(common: &Common, jobs: Option<usize>) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg);
    fs::create_dir_all(&dir)?;
    let mut cells = Vec::new();
    for &d in &cfg.sweep.densities {
        for &s in &cfg.sweep.seeds {
            let mut c = cfg.clone();
            c.name = format!("{}-{d}-{s}", cfg.name);
            c.demand.density = d;
            c.demand.seed = s;
            c.output_dir = None;
            cells.push(c);
        }
    }
    let tasks: Vec<(usize, Mode)> =
        (0..cells.len()).flat_map(|i| [(i, Mode::Baseline), (i, Mode::Advised)]).collect();
    eprintln!("{} cells, {} runs", cells.len(), tasks.len());

    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build()?;
    let results: Vec<_> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(i, mode)| run_scenario(&cells[i], mode).map_err(|e| e.to_string()))
            .collect()
    });

    let mut done = Vec::new();
    let mut failures = Vec::new();
    for (i, pair) in results.chunks(2).enumerate() {
        let cell = &cells[i];
        let cell_dir = dir.join(format!("{}-{}", cell.demand.density, cell.demand.seed));
        let fail = |mode, error| CellFailure {
            density: cell.demand.density,
            seed: cell.demand.seed,
            mode,
            error,
        };
        match (&pair[0], &pair[1]) {
            (Ok(b), Ok(a)) => match compare_cell(cell, &cell_dir, b, a) {
                Ok(c) => done.push(c),
                Err(e) => failures.push(fail(None, format!("{e:#}"))),
            },
            (b, a) => {
                for (mode, r) in [(Mode::Baseline, b), (Mode::Advised, a)] {
                    match r {
                        Ok(run) => {
                            write_run(&cell_dir, run)?;
                            write_manifest(&cell_dir, "run", vec![mode], cell)?;
                        }
                        Err(e) => failures.push(fail(Some(mode), e.clone())),
                    }
                }
            }
        }
    }

    if !done.is_empty() {
        write_comparison(&dir, &done)?;
        let (red, lat) = density_tables(&done);
        write_csv(&dir.join("reductions.csv"), &red)?;
        write_csv(&dir.join("latency_summary.csv"), &lat)?;
        for c in &done {
            print_comparison(c);
        }
    }
    write_manifest(&dir, "sweep", vec![Mode::Baseline, Mode::Advised], &cfg)?;
    if !failures.is_empty() {
        write_json(&dir.join("failures.json"), &failures)?;
        for f in &failures {
            eprintln!("failed: {} seed {}: {}", f.density, f.seed, f.error);
        }
        bail!("{} of {} cells failed; partial results in {}", failures.len(), cells.len(), dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(c) => load_config(c).map(|cfg| {
            print!("{}", cfg.to_toml());
            println!("# sha256 {}", cfg.hash());
        }),
        Command::Run { common, mode } => cmd_run(common, *mode),
        Command::Compare(c) => cmd_compare(c),
        Command::Sweep { common, jobs } => cmd_sweep(common, *jobs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
