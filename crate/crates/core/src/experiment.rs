//! Cross-validated ki sweeps and their CSV/JSON reports.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{self, DataError, FormatSpec, HdiMatrix, NUM_ROTATIONS};
use crate::factors::{self, FactorError};
use crate::solver::{self, IterationRecord, SolverConfig, SolverState, StopReason, TrainError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Data { path: PathBuf, source: DataError },
    #[error(transparent)]
    Split(#[from] DataError),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("invalid experiment configuration: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_owned(), source }
}

/// The integral gains checked by default, 0.00 to 0.09 in steps of 0.01.
pub fn default_ki_grid() -> Vec<f64> {
    (0..10).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub format: FormatSpec,
    /// `hyper.ki` is ignored; each run takes its gain from `ki_grid`.
    pub solver: SolverConfig,
    pub rotations: Vec<usize>,
    pub ki_grid: Vec<f64>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if let Some(r) = self.rotations.iter().find(|&&r| r >= NUM_ROTATIONS) {
            return Err(ExperimentError::Config(format!("rotation {r} outside 0..{NUM_ROTATIONS}")));
        }
        if let Some(k) = self.ki_grid.iter().find(|k| !k.is_finite()) {
            return Err(ExperimentError::Config(format!("non-finite ki {k}")));
        }
        self.solver.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    /// SHA-256 of the raw dataset bytes (or of the serialized triples for in-memory data).
    pub digest: String,
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub best_val_rmse: f64,
    pub best_iteration: usize,
    pub test_rmse: f64,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellResult {
    Completed(CellMetrics),
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub ki: f64,
    pub rotation: usize,
    pub run_id: String,
    pub result: CellResult,
}

impl SweepCell {
    pub fn metrics(&self) -> Option<&CellMetrics> {
        match &self.result {
            CellResult::Completed(m) => Some(m),
            CellResult::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation; `std` is 0 for fewer than two values.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KiAggregate {
    pub ki: f64,
    pub completed: usize,
    pub failed: usize,
    pub best_val_rmse: Option<MeanStd>,
    pub best_iteration: Option<MeanStd>,
    pub test_rmse: Option<MeanStd>,
    pub wall_ms: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dataset: DatasetInfo,
    pub solver: SolverConfig,
    pub rotations: Vec<usize>,
    pub ki_grid: Vec<f64>,
    pub cells: Vec<SweepCell>,
    pub aggregates: Vec<KiAggregate>,
}

/// Per-iteration trace of one run, keyed by run id.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub run_id: String,
    pub records: Vec<IterationRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content address of one run: hash of dataset digest, rotation, ki and seed.
pub fn run_id(digest: &str, rotation: usize, ki: f64, seed: u64) -> String {
    let key = format!("{digest}:{rotation}:{:016x}:{seed}", ki.to_bits());
    sha256_hex(key.as_bytes())[..16].to_owned()
}

/// Load and index a rating file, returning the matrix and its info block.
pub fn load_dataset(path: &Path, format: &FormatSpec) -> Result<(HdiMatrix, DatasetInfo), ExperimentError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let data_err = |source| ExperimentError::Data { path: path.to_owned(), source };
    let parsed = data::parse_ratings(bytes.as_slice(), format).map_err(data_err)?;
    let matrix = HdiMatrix::from_triples(parsed.triples).map_err(data_err)?;
    let info = DatasetInfo {
        name: path.display().to_string(),
        digest: sha256_hex(&bytes),
        n_rows: matrix.n_rows(),
        n_cols: matrix.n_cols(),
        n_entries: matrix.len(),
    };
    Ok((matrix, info))
}

/// Info block for an in-memory matrix, digesting its triples.
pub fn describe(name: &str, matrix: &HdiMatrix) -> DatasetInfo {
    let mut buf = Vec::with_capacity(matrix.len() * 24);
    data::write_ratings(&mut buf, matrix.entries(), data::Delimiter::Tab).expect("write to Vec");
    DatasetInfo {
        name: name.to_owned(),
        digest: sha256_hex(&buf),
        n_rows: matrix.n_rows(),
        n_cols: matrix.n_cols(),
        n_entries: matrix.len(),
    }
}

/// Run every (rotation, ki) cell on `matrix`.
///
/// Within a rotation every ki starts from the same factor matrices. A run
/// that fails (e.g. diverges) is recorded as failed and the sweep goes on.
pub fn run_sweep(
    matrix: &HdiMatrix,
    dataset: DatasetInfo,
    solver_cfg: &SolverConfig,
    rotations: &[usize],
    ki_grid: &[f64],
) -> Result<(SweepReport, Vec<RunTrace>), ExperimentError> {
    solver_cfg.validate()?;
    let mut cells = Vec::with_capacity(rotations.len() * ki_grid.len());
    let mut traces = Vec::with_capacity(cells.capacity());

    for &rotation in rotations {
        let split = data::split_tenfold(matrix, solver_cfg.seed, rotation)?;
        let init = solver_cfg.init_factors(matrix.n_rows(), matrix.n_cols())?;
        for &ki in ki_grid {
            let mut cfg = solver_cfg.clone();
            cfg.hyper.ki = ki;
            let id = run_id(&dataset.digest, rotation, ki, cfg.seed);
            log::info!("run {id}: rotation {rotation}, ki {ki}");

            let started = Instant::now();
            let outcome = solver::train_from(matrix, &split, &cfg, SolverState::new(init.clone()), |_| {});
            let result = match outcome {
                Ok(report) => {
                    let test_rmse = factors::rmse(&report.best_factors, matrix, &split.test)?;
                    traces.push(RunTrace { run_id: id.clone(), records: report.per_iteration.clone() });
                    CellResult::Completed(CellMetrics {
                        best_val_rmse: report.best_val_rmse,
                        best_iteration: report.best_iteration,
                        test_rmse,
                        iterations_run: report.iterations_run,
                        stop_reason: report.stop_reason,
                        wall_ms: started.elapsed().as_secs_f64() * 1e3,
                    })
                }
                Err(err @ TrainError::Diverged { .. }) => {
                    log::warn!("run {id} failed: {err}");
                    CellResult::Failed { reason: err.to_string() }
                }
                Err(err) => return Err(err.into()),
            };
            cells.push(SweepCell { ki, rotation, run_id: id, result });
        }
    }

    let aggregates = aggregate(ki_grid, &cells);
    let report = SweepReport {
        dataset,
        solver: solver_cfg.clone(),
        rotations: rotations.to_vec(),
        ki_grid: ki_grid.to_vec(),
        cells,
        aggregates,
    };
    Ok((report, traces))
}

fn aggregate(ki_grid: &[f64], cells: &[SweepCell]) -> Vec<KiAggregate> {
    ki_grid
        .iter()
        .map(|&ki| {
            let runs: Vec<&SweepCell> = cells.iter().filter(|c| c.ki.to_bits() == ki.to_bits()).collect();
            let done: Vec<&CellMetrics> = runs.iter().filter_map(|c| c.metrics()).collect();
            let stat = |f: fn(&CellMetrics) -> f64| MeanStd::of(&done.iter().map(|m| f(m)).collect::<Vec<_>>());
            KiAggregate {
                ki,
                completed: done.len(),
                failed: runs.len() - done.len(),
                best_val_rmse: stat(|m| m.best_val_rmse),
                best_iteration: stat(|m| m.best_iteration as f64),
                test_rmse: stat(|m| m.test_rmse),
                wall_ms: stat(|m| m.wall_ms),
            }
        })
        .collect()
}

/// Load the dataset named by `config`, sweep it and write the reports.
pub fn run_experiment(config: &ExperimentConfig) -> Result<SweepReport, ExperimentError> {
    config.validate()?;
    let (matrix, info) = load_dataset(&config.dataset, &config.format)?;
    log::info!("loaded {}: {matrix}", info.name);
    let (report, traces) = run_sweep(&matrix, info, &config.solver, &config.rotations, &config.ki_grid)?;
    emit_report(&report, &traces, &config.out_dir)?;
    Ok(report)
}

pub const SWEEP_CSV_HEADER: [&str; 10] = [
    "run_id",
    "ki",
    "rotation",
    "status",
    "best_val_rmse",
    "best_iteration",
    "test_rmse",
    "iterations_run",
    "stop_reason",
    "reason",
];

/// Render the per-cell CSV. Timing is left out so the file is reproducible.
pub fn sweep_csv(report: &SweepReport) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_CSV_HEADER)?;
    for cell in &report.cells {
        let (rotation, ki) = (cell.rotation.to_string(), cell.ki.to_string());
        match &cell.result {
            CellResult::Completed(m) => w.write_record([
                cell.run_id.as_str(),
                &ki,
                &rotation,
                "completed",
                &m.best_val_rmse.to_string(),
                &m.best_iteration.to_string(),
                &m.test_rmse.to_string(),
                &m.iterations_run.to_string(),
                m.stop_reason.as_str(),
                "",
            ])?,
            CellResult::Failed { reason } => {
                w.write_record([cell.run_id.as_str(), &ki, &rotation, "failed", "", "", "", "", "", reason])?
            }
        }
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

/// Write `sweep.csv`, `sweep.json` and `traces/<run-id>.csv` under `dir`.
pub fn emit_report(report: &SweepReport, traces: &[RunTrace], dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let csv_path = dir.join("sweep.csv");
    let bytes = sweep_csv(report).map_err(|source| ExperimentError::Csv { path: csv_path.clone(), source })?;
    fs::write(&csv_path, bytes).map_err(io_err(&csv_path))?;

    let json_path = dir.join("sweep.json");
    let file = File::create(&json_path).map_err(io_err(&json_path))?;
    serde_json::to_writer_pretty(BufWriter::new(file), report)
        .map_err(|source| ExperimentError::Json { path: json_path.clone(), source })?;

    if !traces.is_empty() {
        let trace_dir = dir.join("traces");
        fs::create_dir_all(&trace_dir).map_err(io_err(&trace_dir))?;
        for trace in traces {
            let path = trace_dir.join(format!("{}.csv", trace.run_id));
            let file = File::create(&path).map_err(io_err(&path))?;
            solver::write_trace(BufWriter::new(file), &trace.records)
                .map_err(|source| ExperimentError::Csv { path: path.clone(), source })?;
        }
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<SweepReport, ExperimentError> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| ExperimentError::Json { path: path.to_owned(), source })
}

fn fmt_stat(s: Option<MeanStd>, prec: usize) -> String {
    match s {
        Some(s) => format!("{:.*} ± {:.*}", prec, s.mean, prec, s.std),
        None => "-".into(),
    }
}

/// Plain-text summary comparing the best ki against ki = 0.
pub fn render_summary(report: &SweepReport) -> String {
    let mut out = String::new();
    let d = &report.dataset;
    let _ = writeln!(out, "dataset {} ({}x{}, {} known entries)", d.name, d.n_rows, d.n_cols, d.n_entries);
    let _ = writeln!(
        out,
        "f={} lambda={} kp={} schedule={:?} rotations={:?}",
        report.solver.rank, report.solver.hyper.lambda, report.solver.hyper.kp, report.solver.schedule, report.rotations
    );
    let _ = writeln!(out, "{:>6}  {:>22}  {:>18}  {:>22}  {:>6}", "ki", "val RMSE", "iterations", "test RMSE", "failed");
    for a in &report.aggregates {
        let _ = writeln!(
            out,
            "{:>6.2}  {:>22}  {:>18}  {:>22}  {:>6}",
            a.ki,
            fmt_stat(a.best_val_rmse, 5),
            fmt_stat(a.best_iteration, 1),
            fmt_stat(a.test_rmse, 5),
            a.failed
        );
    }
    let best = report
        .aggregates
        .iter()
        .filter_map(|a| a.best_val_rmse.map(|s| (a, s.mean)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let base = report.aggregates.iter().find(|a| a.ki == 0.0);
    if let (Some((best, rmse)), Some(base)) = (best, base) {
        if let (Some(b_rmse), Some(b_it), Some(it)) = (base.best_val_rmse, base.best_iteration, best.best_iteration) {
            let _ = writeln!(
                out,
                "optimal ki {:.2}: RMSE {:.5} in {:.1} iterations vs ki=0: {:.5} in {:.1}",
                best.ki, rmse, it.mean, b_rmse.mean, b_it.mean
            );
        }
    }
    out
}
