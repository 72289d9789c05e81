//! Command-line front end: run one closed-loop episode, sweep a seed range
//! for batch statistics, or compare the metrics of two finished runs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mav_nmpc::sim::{
    emit_outputs, run_episode, ControllerMode, EpisodeConfig, EpisodeMetrics,
};

#[derive(Parser)]
#[command(
    name = "mav-nmpc",
    version,
    about = "Simulates cloud-controlled MAV navigation under network delays"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write trace.csv, metrics.json, and plot data.
    Run {
        /// Episode config file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the delay-sampling seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the controller mode from the config.
        #[arg(long)]
        controller: Option<ControllerChoice>,
        /// Output directory, created if missing.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one episode per seed and print per-seed metrics plus a summary.
    Sweep {
        /// Episode config file (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Inclusive seed range, e.g. 0..9.
        #[arg(long)]
        seeds: String,
        /// Override the controller mode from the config.
        #[arg(long)]
        controller: Option<ControllerChoice>,
        /// When given, each seed's outputs land in <out>/seed_<k>/.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the metrics of two finished runs side by side.
    Compare {
        /// Directory of the first run (holds metrics.json).
        #[arg(long)]
        a: PathBuf,
        /// Directory of the second run.
        #[arg(long)]
        b: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ControllerChoice {
    Multistage,
    Standard,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            controller,
            out,
        } => {
            let cfg = load_config(&config, seed, controller)?;
            let (trace, metrics) = run_episode(&cfg)?;
            emit_outputs(&trace, &metrics, &out)
                .with_context(|| format!("writing outputs to {}", out.display()))?;
            println!("wrote {}", out.display());
            print_metrics(&metrics);
        }
        Command::Sweep {
            config,
            seeds,
            controller,
            out,
        } => {
            let (first, last) = parse_seed_range(&seeds)?;
            let mut results = Vec::new();
            for seed in first..=last {
                let cfg = load_config(&config, Some(seed), controller)?;
                let (trace, metrics) = run_episode(&cfg)?;
                if let Some(dir) = &out {
                    let seed_dir = dir.join(format!("seed_{seed}"));
                    emit_outputs(&trace, &metrics, &seed_dir)
                        .with_context(|| format!("writing {}", seed_dir.display()))?;
                }
                println!(
                    "seed {seed:>4}: reached {:<5} path {:>7.3} m collisions {:>3} mean solve {:>7.2} ms",
                    metrics.reached_goal, metrics.path_length, metrics.collision_count,
                    metrics.mean_solve_time_ms,
                );
                results.push(metrics);
            }
            print_sweep_summary(&results);
        }
        Command::Compare { a, b } => {
            let ma = read_metrics(&a)?;
            let mb = read_metrics(&b)?;
            print_comparison(&a, &ma, &b, &mb);
        }
    }
    Ok(())
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    controller: Option<ControllerChoice>,
) -> Result<EpisodeConfig> {
    let mut cfg = EpisodeConfig::from_file(path)
        .with_context(|| format!("loading config {}", path.display()))?;
    if let Some(seed) = seed {
        cfg.delays.seed = seed;
    }
    if let Some(choice) = controller {
        cfg.controller.mode = match choice {
            ControllerChoice::Multistage => ControllerMode::Multistage,
            ControllerChoice::Standard => ControllerMode::Standard,
        };
    }
    Ok(cfg)
}

fn parse_seed_range(text: &str) -> Result<(u64, u64)> {
    let Some((first, last)) = text.split_once("..") else {
        bail!("seed range must look like A..B, got {text:?}");
    };
    let first: u64 = first.trim().parse().context("first seed")?;
    let last: u64 = last.trim().parse().context("last seed")?;
    if last < first {
        bail!("seed range is empty: {first}..{last}");
    }
    Ok((first, last))
}

fn read_metrics(run_dir: &Path) -> Result<EpisodeMetrics> {
    let path = run_dir.join("metrics.json");
    let text =
        fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_metrics(m: &EpisodeMetrics) {
    println!("reached_goal        {}", m.reached_goal);
    println!("path_length_m       {:.3}", m.path_length);
    println!("collision_count     {}", m.collision_count);
    println!("min_clearance_m     {}", fmt_opt(m.min_obstacle_clearance));
    println!("mean_solve_ms       {:.2}", m.mean_solve_time_ms);
    println!("max_solve_ms        {:.2}", m.max_solve_time_ms);
    println!("duration_s          {:.3}", m.episode_duration);
}

fn print_sweep_summary(results: &[EpisodeMetrics]) {
    let n = results.len();
    let reached = results.iter().filter(|m| m.reached_goal).count();
    let collision_free = results.iter().filter(|m| m.collision_count == 0).count();
    let mut paths: Vec<f64> = results.iter().map(|m| m.path_length).collect();
    let mean_solve =
        results.iter().map(|m| m.mean_solve_time_ms).sum::<f64>() / n.max(1) as f64;
    println!("---");
    println!("episodes            {n}");
    println!("reached_goal        {reached}/{n}");
    println!("collision_free      {collision_free}/{n}");
    println!("median_path_m       {:.3}", median(&mut paths));
    println!("mean_solve_ms       {mean_solve:.2}");
}

fn print_comparison(a_dir: &Path, a: &EpisodeMetrics, b_dir: &Path, b: &EpisodeMetrics) {
    println!("{:<20} {:>14} {:>14}", "metric", "a", "b");
    println!("{:<20} {:>14} {:>14}", "run", a_dir.display(), b_dir.display());
    let row = |name: &str, va: String, vb: String| println!("{name:<20} {va:>14} {vb:>14}");
    row(
        "path_length_m",
        format!("{:.3}", a.path_length),
        format!("{:.3}", b.path_length),
    );
    row(
        "reached_goal",
        a.reached_goal.to_string(),
        b.reached_goal.to_string(),
    );
    row(
        "collision_count",
        a.collision_count.to_string(),
        b.collision_count.to_string(),
    );
    row(
        "min_clearance_m",
        fmt_opt(a.min_obstacle_clearance),
        fmt_opt(b.min_obstacle_clearance),
    );
    row(
        "mean_solve_ms",
        format!("{:.2}", a.mean_solve_time_ms),
        format!("{:.2}", b.mean_solve_time_ms),
    );
    row(
        "max_solve_ms",
        format!("{:.2}", a.max_solve_time_ms),
        format!("{:.2}", b.max_solve_time_ms),
    );
    row(
        "duration_s",
        format!("{:.3}", a.episode_duration),
        format!("{:.3}", b.episode_duration),
    );
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |c| format!("{c:.3}"))
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("metrics are finite"));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}
