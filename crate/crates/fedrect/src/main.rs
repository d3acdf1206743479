//! Thin command-line front end over the library: `run`, `analyze`,
//! `pipeline`, and `sweep`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedrect::analysis::{montecarlo_mse, tradeoff_table, EstimatorStats};
use fedrect::config::{ExperimentConfig, PipelineFileSpec};
use fedrect::error::{Error, Result};
use fedrect::harness::{run, sweep, SweepGrid};
use fedrect::pipeline::{
    analytic_latency, client_memory, latency_reduction, simulate_pipeline, LatencyMode,
    MemoryMode, MemorySpec,
};

#[derive(Parser)]
#[command(
    name = "fedrect",
    version,
    about = "Deterministic simulator for cloud-assisted federated fine-tuning with zeroth-order gradient rectification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file and write metrics, summary,
    /// and optionally a message trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write trace.ndjson with one record per protocol message.
        #[arg(long)]
        trace: bool,
        /// Metrics CSV of a baseline run; adds speedup_vs_baseline to the
        /// summary.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Print the estimator tradeoff table for given noise scales.
    Analyze {
        /// Comma-separated stats: d=1000,sigma2=1.0,bias2=5.0,tau2=5.0
        #[arg(long)]
        stats: String,
        /// Lambda grid points for the table.
        #[arg(long, default_value_t = 11)]
        grid: usize,
        /// Monte Carlo trials per table row (0 disables the empirical
        /// column).
        #[arg(long, default_value_t = 0)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Evaluate the layer-pipeline latency and memory models for a spec
    /// file.
    Pipeline {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Run one experiment per grid cell and write a tidy results table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_stats(text: &str) -> Result<EstimatorStats> {
    let mut d = None;
    let mut sigma2 = None;
    let mut bias2 = None;
    let mut tau2 = None;
    for part in text.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--stats: expected key=value, got '{part}'")))?;
        let value = value.trim();
        match key.trim() {
            "d" => {
                d = Some(value.parse::<usize>().map_err(|e| Error::Config(format!("--stats d: {e}")))?)
            }
            "sigma2" => {
                sigma2 = Some(
                    value.parse::<f64>().map_err(|e| Error::Config(format!("--stats sigma2: {e}")))?,
                )
            }
            "bias2" => {
                bias2 = Some(
                    value.parse::<f64>().map_err(|e| Error::Config(format!("--stats bias2: {e}")))?,
                )
            }
            "tau2" => {
                tau2 = Some(
                    value.parse::<f64>().map_err(|e| Error::Config(format!("--stats tau2: {e}")))?,
                )
            }
            other => return Err(Error::Config(format!("--stats: unknown key '{other}'"))),
        }
    }
    let missing = |name: &str| Error::Config(format!("--stats: missing {name}"));
    EstimatorStats::new(
        d.ok_or_else(|| missing("d"))?,
        sigma2.ok_or_else(|| missing("sigma2"))?,
        bias2.ok_or_else(|| missing("bias2"))?,
        tau2.ok_or_else(|| missing("tau2"))?,
    )
}

fn cmd_analyze(stats_text: &str, grid: usize, trials: usize, seed: u64) -> Result<()> {
    let stats = parse_stats(stats_text)?;
    let table = tradeoff_table(&stats, grid)?;
    println!(
        "stats: d={} sigma2={} bias2={} tau2={}",
        stats.d, stats.sigma2, stats.bias2, stats.tau2
    );
    if trials > 0 {
        println!("{:>8} {:>14} {:>14}", "lambda", "mse", "mc_mse");
    } else {
        println!("{:>8} {:>14}", "lambda", "mse");
    }
    for row in &table.rows {
        if trials > 0 {
            let mc = montecarlo_mse(&stats, row.lambda, trials, seed)?;
            println!("{:>8.3} {:>14.6} {:>14.6}", row.lambda, row.mse, mc);
        } else {
            println!("{:>8.3} {:>14.6}", row.lambda, row.mse);
        }
    }
    println!();
    println!("lambda*         = {:.6}", table.optimal_lambda);
    println!("mse(lambda*)    = {:.6}", table.mse_at_optimum);
    match table.speedup {
        Some(s) => println!("speedup_ratio   = {s:.6}"),
        None => println!("speedup_ratio   = unbounded (surrogate error is zero)"),
    }
    match table.accuracy {
        Some(a) => println!("accuracy_ratio  = {a:.6}"),
        None => println!("accuracy_ratio  = undefined (zeroth-order noise is zero)"),
    }
    Ok(())
}

fn cmd_pipeline(spec_path: &PathBuf) -> Result<()> {
    let file = PipelineFileSpec::load(spec_path)?;
    let spec = file.to_pipeline_spec()?;
    let sequential = analytic_latency(&spec, LatencyMode::Sequential);
    let pipelined = analytic_latency(&spec, LatencyMode::Pipelined);
    let sim = simulate_pipeline(&spec);
    println!("layers                 = {}", spec.layers);
    println!("sequential latency (s) = {sequential:.6}");
    println!("pipelined closed form  = {pipelined:.6}");
    println!("event-sim makespan (s) = {:.6}", sim.makespan_s);
    println!("modeled reduction (s)  = {:.6}", latency_reduction(&spec));
    println!();

    let mem = &file.memory;
    let gib = 1024.0f64.powi(3);
    let table = [
        ("baseline (4 Mem0)", MemoryMode::Baseline, None, None),
        ("pipelined (1 + 2/L)", MemoryMode::Spc, None, None),
        ("pipelined+compressed", MemoryMode::SpcDtc, Some(mem.omega), Some(mem.theta)),
    ];
    println!("{:<22} {:>14} {:>10}", "memory mode", "bytes", "GiB");
    for (name, mode, omega, theta) in table {
        let bytes = client_memory(&MemorySpec {
            model_bytes: mem.model_bytes,
            layers: spec.layers,
            omega,
            theta,
            mode,
        })?;
        println!("{name:<22} {bytes:>14.0} {:>10.2}", bytes / gib);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, trace, baseline } => ExperimentConfig::load(&config)
            .and_then(|cfg| run(&cfg, &out, trace, baseline.as_deref(), Some(&config)))
            .map(|artifacts| {
                println!("metrics: {}", artifacts.metrics_path.display());
                println!("summary: {}", artifacts.summary_path.display());
                if let Some(t) = artifacts.trace_path {
                    println!("trace:   {}", t.display());
                }
                if let Some(c) = artifacts.convergence_round {
                    println!("convergence_round: {c}");
                }
            }),
        Command::Analyze { stats, grid, trials, seed } => cmd_analyze(&stats, grid, trials, seed),
        Command::Pipeline { spec } => cmd_pipeline(&spec),
        Command::Sweep { config, grid, out } => ExperimentConfig::load(&config)
            .and_then(|cfg| SweepGrid::load(&grid).map(|g| (cfg, g)))
            .and_then(|(cfg, g)| sweep(&cfg, &g, &out))
            .map(|table| println!("results table: {}", table.display())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
