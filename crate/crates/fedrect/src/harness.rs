//! Experiment orchestration: dataset assembly, single runs with metrics /
//! summary / trace files, and parameter sweeps.
//!
//! Output files are written atomically (temp file then rename). Metrics
//! CSVs are byte-identical across identical runs; wall-clock timestamps are
//! confined to the summary's `[meta]` block.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Deserialize;

use crate::analysis::{optimal_lambda, quadratic_descent, speedup_ratio, EstimatorStats};
use crate::config::{DatasetSection, ExperimentConfig};
use crate::data::{load_csv, partition_dirichlet, split_eval, synthetic_mixture};
use crate::error::{Error, Result};
use crate::federation::{run_experiment, DatasetBundle, RunMode};
use crate::metrics::{MetricsRow, MetricsSeries};

/// Smoothing window for the convergence-round rule.
pub const CONVERGENCE_WINDOW: usize = 5;
/// A run converges at the first round whose smoothed accuracy reaches this
/// fraction of the run's smoothed maximum.
pub const CONVERGENCE_FRACTION: f64 = 0.99;

/// Files produced by one run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub metrics_path: PathBuf,
    pub summary_path: PathBuf,
    pub trace_path: Option<PathBuf>,
    pub convergence_round: Option<u64>,
    pub final_row: Option<MetricsRow>,
}

fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Builds the dataset bundle for a classification config: eval split first,
/// then the Dirichlet partition into client shards plus the public holdout.
pub fn build_bundle(cfg: &ExperimentConfig) -> Result<DatasetBundle> {
    let fed = cfg.federation_config()?;
    let (dataset, concentration, eval_fraction, public_fraction, seed) = match &cfg.dataset {
        DatasetSection::Synthetic {
            features,
            classes,
            samples,
            noise,
            spread,
            concentration,
            eval_fraction,
            public_fraction,
            seed,
        } => (
            synthetic_mixture(
                *features,
                *classes,
                *samples,
                *noise,
                *spread,
                seed.unwrap_or(fed.root_seed),
            )?,
            *concentration,
            *eval_fraction,
            *public_fraction,
            seed.unwrap_or(fed.root_seed),
        ),
        DatasetSection::Csv {
            path,
            label_column,
            concentration,
            eval_fraction,
            public_fraction,
            seed,
        } => {
            let data = load_csv(path, label_column)?;
            (data, *concentration, *eval_fraction, *public_fraction, seed.unwrap_or(fed.root_seed))
        }
        DatasetSection::Quadratic { .. } => {
            return Err(Error::Config(
                "dataset.kind = quadratic runs the descent experiment, not a federation".into(),
            ))
        }
    };
    let arch = cfg.arch()?;
    if dataset.feature_dim() != arch.input_dim() {
        return Err(Error::Config(format!(
            "dataset feature dim {} must match model.arch input {}",
            dataset.feature_dim(),
            arch.input_dim()
        )));
    }
    if dataset.num_classes() > arch.output_dim() {
        return Err(Error::Config(format!(
            "dataset has {} classes but model.arch outputs {}",
            dataset.num_classes(),
            arch.output_dim()
        )));
    }
    let (train, eval) = split_eval(&dataset, eval_fraction, seed)?;
    let part = partition_dirichlet(&train, fed.clients, concentration, public_fraction, seed)?;
    Ok(DatasetBundle { clients: part.clients, public: part.public, eval })
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn summary_text(
    cfg: &ExperimentConfig,
    metrics: &MetricsSeries,
    fallback_rounds: &[u64],
    speedup_vs_baseline: Option<f64>,
    config_path: Option<&Path>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "schema = \"run-summary/v1\"");
    let _ = writeln!(out);
    let _ = writeln!(out, "[run]");
    let mode = match cfg.mode {
        RunMode::PureZoo => "pure_zoo",
        RunMode::Zgr => "zgr",
        RunMode::BpOracle => "bp_oracle",
    };
    let _ = writeln!(out, "mode = \"{mode}\"");
    let _ = writeln!(out, "rounds = {}", metrics.len());
    if let Some(last) = metrics.final_row() {
        let _ = writeln!(out, "final_train_loss = {}", last.train_loss);
        let _ = writeln!(out, "final_eval_accuracy = {}", last.eval_accuracy);
        let _ = writeln!(out, "sim_wall_clock_s = {}", last.sim_wall_clock_s);
    }
    match metrics.convergence_round(CONVERGENCE_WINDOW, CONVERGENCE_FRACTION) {
        Some(r) => {
            let _ = writeln!(out, "convergence_round = {r}");
        }
        None => {
            let _ = writeln!(out, "convergence_round = -1");
        }
    }
    let c2c: u64 = metrics.rows().iter().map(|r| r.bytes_cloud_to_client).sum();
    let c2e: u64 = metrics.rows().iter().map(|r| r.bytes_client_to_edge).sum();
    let _ = writeln!(out, "total_bytes_cloud_to_client = {c2c}");
    let _ = writeln!(out, "total_bytes_client_to_edge = {c2e}");
    let _ = writeln!(out, "fallback_rounds = {}", fallback_rounds.len());
    if let Some(s) = speedup_vs_baseline {
        let _ = writeln!(out, "speedup_vs_baseline = {s}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "[meta]");
    let _ = writeln!(out, "created_unix = {}", unix_now());
    if let Some(p) = config_path {
        let _ = writeln!(out, "config = \"{}\"", p.display());
    }
    out
}

/// Convergence round of a previously written metrics CSV, using the same
/// smoothing rule as the summary.
pub fn convergence_round_of_csv(path: &Path) -> Result<Option<u64>> {
    let text = fs::read_to_string(path)?;
    let mut series = MetricsSeries::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Decode(format!("metrics row {i}: {} fields", fields.len())));
        }
        let parse_f =
            |s: &str| s.parse::<f64>().map_err(|e| Error::Decode(format!("row {i}: {e}")));
        let parse_u =
            |s: &str| s.parse::<u64>().map_err(|e| Error::Decode(format!("row {i}: {e}")));
        series.push(MetricsRow {
            round: parse_u(fields[0])?,
            sim_wall_clock_s: parse_f(fields[1])?,
            train_loss: parse_f(fields[2])?,
            eval_accuracy: parse_f(fields[3])?,
            alpha_used: parse_f(fields[4])?,
            guided_flag: fields[5] == "true",
            bytes_cloud_to_client: parse_u(fields[6])?,
            bytes_client_to_edge: parse_u(fields[7])?,
            client_mem_bytes: parse_u(fields[8])?,
        })?;
    }
    Ok(series.convergence_round(CONVERGENCE_WINDOW, CONVERGENCE_FRACTION))
}

/// Executes one experiment and writes `metrics.csv`, `summary.toml`, and
/// optionally `trace.ndjson` into `out_dir`.
pub fn run(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    with_trace: bool,
    baseline_metrics: Option<&Path>,
    config_path: Option<&Path>,
) -> Result<RunArtifacts> {
    fs::create_dir_all(out_dir)?;
    if matches!(cfg.dataset, DatasetSection::Quadratic { .. }) {
        return run_quadratic(cfg, out_dir, config_path);
    }
    let setup = cfg.experiment_setup()?;
    let bundle = build_bundle(cfg)?;
    let run = run_experiment(&setup, &bundle, with_trace)?;

    let metrics_path = out_dir.join("metrics.csv");
    write_atomic(&metrics_path, &run.metrics.to_csv())?;

    let convergence = run.metrics.convergence_round(CONVERGENCE_WINDOW, CONVERGENCE_FRACTION);
    let speedup = match (baseline_metrics, convergence) {
        (Some(path), Some(own)) if own > 0 => {
            convergence_round_of_csv(path)?.map(|base| base as f64 / own as f64)
        }
        _ => None,
    };

    let summary_path = out_dir.join("summary.toml");
    write_atomic(
        &summary_path,
        &summary_text(cfg, &run.metrics, &run.fallback_rounds, speedup, config_path),
    )?;

    let trace_path = match run.trace {
        Some(trace) => {
            let mut text = String::new();
            for rec in &trace {
                let line = serde_json::to_string(rec)
                    .map_err(|e| Error::Decode(format!("trace encode: {e}")))?;
                text.push_str(&line);
                text.push('\n');
            }
            let path = out_dir.join("trace.ndjson");
            write_atomic(&path, &text)?;
            Some(path)
        }
        None => None,
    };

    Ok(RunArtifacts {
        metrics_path,
        summary_path,
        trace_path,
        convergence_round: convergence,
        final_row: run.metrics.final_row().copied(),
    })
}

/// The controlled-quadratic path of `run`: noisy descent with the mode's
/// mixing weight (pure_zoo -> 0, zgr -> the optimal weight, bp_oracle -> 1).
fn run_quadratic(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    config_path: Option<&Path>,
) -> Result<RunArtifacts> {
    let DatasetSection::Quadratic { d, sigma2, bias2, tau2, start_radius, target, max_iters } =
        cfg.dataset
    else {
        unreachable!("caller checks the dataset kind");
    };
    let stats = EstimatorStats::new(d, sigma2, bias2, tau2)?;
    let lambda = match cfg.mode {
        RunMode::PureZoo => 0.0,
        RunMode::Zgr => optimal_lambda(&stats)?,
        RunMode::BpOracle => 1.0,
    };
    let seed = cfg.federation.root_seed;
    let outcome = quadratic_descent(&stats, lambda, start_radius, target, max_iters, seed)?;

    let mut out = String::new();
    let _ = writeln!(out, "schema = \"quadratic-summary/v1\"");
    let _ = writeln!(out);
    let _ = writeln!(out, "[run]");
    let _ = writeln!(out, "lambda = {lambda}");
    let _ = writeln!(out, "target = {target}");
    match outcome.iterations {
        Some(it) => {
            let _ = writeln!(out, "iterations_to_target = {it}");
        }
        None => {
            let _ = writeln!(out, "iterations_to_target = -1");
        }
    }
    let _ = writeln!(out, "final_value = {}", outcome.final_value);
    if let Ok(s) = speedup_ratio(&stats) {
        let _ = writeln!(out, "theoretical_speedup = {s}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "[meta]");
    let _ = writeln!(out, "created_unix = {}", unix_now());
    if let Some(p) = config_path {
        let _ = writeln!(out, "config = \"{}\"", p.display());
    }

    let summary_path = out_dir.join("summary.toml");
    write_atomic(&summary_path, &out)?;
    // The descent experiment has no per-round metrics; write an empty,
    // schema-stable CSV so downstream tooling finds the file.
    let metrics_path = out_dir.join("metrics.csv");
    write_atomic(&metrics_path, &MetricsSeries::new().to_csv())?;
    Ok(RunArtifacts {
        metrics_path,
        summary_path,
        trace_path: None,
        convergence_round: None,
        final_row: None,
    })
}

/// Axes of a sweep, all optional; the cells are their Cartesian product.
/// Each ablation flag additionally produces one row on the base config.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub gamma: Vec<u64>,
    pub m_max: Vec<usize>,
    pub probes: Vec<usize>,
    pub bits: Vec<u8>,
    pub omega: Vec<String>,
    pub ablations: Vec<String>,
}

impl SweepGrid {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("grid {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("grid parse: {e}")))
    }
}

#[derive(Debug, Clone, Default)]
struct CellPatch {
    alpha: Option<f64>,
    gamma: Option<u64>,
    m_max: Option<usize>,
    probes: Option<usize>,
    bits: Option<u8>,
    omega: Option<String>,
    ablation: Option<String>,
}

impl CellPatch {
    fn apply(&self, base: &ExperimentConfig) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        if let Some(a) = self.alpha {
            cfg.federation.alpha = a;
        }
        if let Some(g) = self.gamma {
            cfg.federation.gamma = g;
        }
        if let Some(m) = self.m_max {
            cfg.federation.m_max = m;
        }
        if let Some(k) = self.probes {
            cfg.federation.probes = k;
        }
        if let Some(b) = self.bits {
            cfg.dtc.bits = b;
        }
        if let Some(w) = &self.omega {
            cfg.dtc.omega = w.clone();
        }
        match self.ablation.as_deref() {
            None => {}
            Some("no_guidance") => cfg.mode = RunMode::PureZoo,
            Some("no_spc") => cfg.spc.enabled = false,
            Some("no_dtc") => cfg.dtc.enabled = false,
            Some(other) => {
                return Err(Error::Config(format!(
                    "grid.ablations: unknown flag '{other}' (expected no_guidance, no_spc, no_dtc)"
                )))
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn label(&self) -> String {
        fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map_or("-".to_string(), |x| x.to_string())
        }
        format!(
            "{},{},{},{},{},{},{}",
            opt(&self.alpha),
            opt(&self.gamma),
            opt(&self.m_max),
            opt(&self.probes),
            opt(&self.bits),
            opt(&self.omega),
            self.ablation.as_deref().unwrap_or("-"),
        )
    }
}

fn grid_cells(grid: &SweepGrid) -> Vec<CellPatch> {
    fn axis<T: Clone>(values: &[T]) -> Vec<Option<T>> {
        if values.is_empty() {
            vec![None]
        } else {
            values.iter().cloned().map(Some).collect()
        }
    }
    let mut cells = Vec::new();
    for alpha in axis(&grid.alpha) {
        for gamma in axis(&grid.gamma) {
            for m_max in axis(&grid.m_max) {
                for probes in axis(&grid.probes) {
                    for bits in axis(&grid.bits) {
                        for omega in axis(&grid.omega) {
                            cells.push(CellPatch {
                                alpha,
                                gamma,
                                m_max,
                                probes,
                                bits,
                                omega: omega.clone(),
                                ablation: None,
                            });
                        }
                    }
                }
            }
        }
    }
    for flag in &grid.ablations {
        cells.push(CellPatch { ablation: Some(flag.clone()), ..Default::default() });
    }
    cells
}

/// One run per grid cell with shared seeds; failures are flagged per cell
/// and the sweep continues. Returns the path of the results table.
pub fn sweep(cfg: &ExperimentConfig, grid: &SweepGrid, out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let cells = grid_cells(grid);
    let mut table = String::from(
        "cell,alpha,gamma,m_max,probes,bits,omega,ablation,status,rounds,final_train_loss,final_eval_accuracy,convergence_round,sim_wall_clock_s\n",
    );
    for (idx, patch) in cells.iter().enumerate() {
        let row = match patch.apply(cfg) {
            Err(e) => format!("{idx},{},error: {e},,,,,\n", patch.label()),
            Ok(cell_cfg) => {
                let cell_dir = out_dir.join(format!("cell_{idx:03}"));
                match run(&cell_cfg, &cell_dir, false, None, None) {
                    Err(e) => format!("{idx},{},error: {e},,,,,\n", patch.label()),
                    Ok(artifacts) => {
                        let (rounds, loss, acc, clock) = match &artifacts.final_row {
                            Some(r) => (
                                (r.round + 1).to_string(),
                                r.train_loss.to_string(),
                                r.eval_accuracy.to_string(),
                                r.sim_wall_clock_s.to_string(),
                            ),
                            None => ("0".into(), String::new(), String::new(), String::new()),
                        };
                        let conv = artifacts
                            .convergence_round
                            .map_or("-1".to_string(), |c| c.to_string());
                        format!("{idx},{},ok,{rounds},{loss},{acc},{conv},{clock}\n", patch.label())
                    }
                }
            }
        };
        table.push_str(&row);
    }
    let table_path = out_dir.join("sweep.csv");
    write_atomic(&table_path, &table)?;
    Ok(table_path)
}
