use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use pinlf::checkpoint;
use pinlf::data::{self, Delimiter, FormatSpec, SplitManifest};
use pinlf::experiment::{self, ExperimentConfig, ExperimentError};
use pinlf::factors::{self, Hyperparams};
use pinlf::solver::{self, Schedule, SolverConfig, SolverState, StopReason, TrainError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "pinlf", version, about = "Non-negative latent factor analysis with PI increment refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a rating file, split it and write split manifests
    Prepare(PrepareArgs),
    /// Train a single model on one rotation
    Train(TrainArgs),
    /// Sweep a grid of integral gains over several rotations
    Sweep(SweepArgs),
    /// Re-render sweep.csv and a summary from sweep.json
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tab,
    Comma,
    #[value(name = "mldouble-colon")]
    MlDoubleColon,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "tab")]
    format: Format,
    /// First line is a header
    #[arg(long)]
    header: bool,
    /// Zero-based field positions of row id, column id and value
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0usize, 1, 2])]
    columns: Vec<usize>,
}

impl DatasetArgs {
    fn format_spec(&self) -> FormatSpec {
        let delimiter = match self.format {
            Format::Tab => Delimiter::Tab,
            Format::Comma => Delimiter::Comma,
            Format::MlDoubleColon => Delimiter::DoubleColon,
        };
        FormatSpec {
            delimiter,
            row_field: self.columns[0],
            col_field: self.columns[1],
            value_field: self.columns[2],
            has_header: self.header,
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Latent dimension
    #[arg(long = "f", default_value_t = 20)]
    rank: usize,
    #[arg(long, default_value_t = 0.08)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    kp: f64,
    #[arg(long = "max-iters", default_value_t = 1000)]
    max_iters: usize,
    #[arg(long = "error-threshold", default_value_t = 1e-5)]
    error_threshold: f64,
    #[arg(long, default_value = "gauss-seidel")]
    schedule: Schedule,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long = "init-lo", default_value_t = 0.0)]
    init_lo: f64,
    #[arg(long = "init-hi", default_value_t = 0.5)]
    init_hi: f64,
}

impl SolverArgs {
    fn config(&self, ki: f64) -> SolverConfig {
        SolverConfig {
            hyper: Hyperparams { lambda: self.lambda, kp: self.kp, ki },
            rank: self.rank,
            max_iters: self.max_iters,
            error_threshold: self.error_threshold,
            schedule: self.schedule,
            seed: self.seed,
            init_range: (self.init_lo, self.init_hi),
        }
    }
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2, 3, 4])]
    rotations: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 0.0)]
    ki: f64,
    #[arg(long, alias = "rotations", default_value_t = 0)]
    rotation: usize,
    #[arg(long)]
    out: PathBuf,
    /// Write the final solver state here
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Resume from a checkpoint written by a previous run
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long = "ki-grid", value_delimiter = ',', default_values_t = experiment::default_ki_grid())]
    ki_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2, 3, 4])]
    rotations: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding sweep.json; sweep.csv is rewritten there
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Diverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Diverged(_) => EXIT_DIVERGED,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Diverged(m) => m,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Train(TrainError::Diverged { .. }) => CliError::Diverged(e.to_string()),
            ExperimentError::Train(TrainError::Config(_)) | ExperimentError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        ExperimentError::Train(e).into()
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_error(path, e))?;
    w.write_all(b"\n").map_err(|e| io_error(path, e))
}

fn prepare(args: &PrepareArgs) -> Result<(), CliError> {
    let (matrix, info) = experiment::load_dataset(&args.dataset.dataset, &args.dataset.format_spec())?;
    println!("{}: {matrix}", info.name);
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;

    #[derive(Serialize)]
    struct Manifest<'a> {
        dataset: &'a experiment::DatasetInfo,
        splits: Vec<SplitManifest>,
    }
    let mut splits = Vec::new();
    for &rotation in &args.rotations {
        let split = data::split_tenfold(&matrix, args.seed, rotation).map_err(|e| match e {
            data::DataError::BadRotation(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        })?;
        let m = SplitManifest::from(&split);
        println!(
            "rotation {rotation}: train {} / validation {} / test {}",
            m.train_len, m.validation_len, m.test_len
        );
        splits.push(m);
    }
    write_json(&args.out.join("manifest.json"), &Manifest { dataset: &info, splits })
}

#[derive(Serialize)]
struct TrainSummary {
    dataset: experiment::DatasetInfo,
    config: SolverConfig,
    rotation: usize,
    run_id: String,
    iterations_run: usize,
    last_iteration: usize,
    stop_reason: StopReason,
    initial_val_rmse: f64,
    best_iteration: usize,
    best_val_rmse: f64,
    test_rmse_at_best: f64,
    solver_ms: f64,
}

fn train(args: &TrainArgs) -> Result<(), CliError> {
    let config = args.solver.config(args.ki);
    config.validate()?;
    let (matrix, info) = experiment::load_dataset(&args.dataset.dataset, &args.dataset.format_spec())?;
    info!("loaded {}: {matrix}", info.name);
    let split = data::split_tenfold(&matrix, config.seed, args.rotation).map_err(|e| match e {
        data::DataError::BadRotation(_) => CliError::Usage(e.to_string()),
        _ => CliError::Data(e.to_string()),
    })?;

    let state = match &args.resume {
        Some(path) => {
            let file = File::open(path).map_err(|e| io_error(path, e))?;
            checkpoint::read_state(std::io::BufReader::new(file)).map_err(|e| io_error(path, e))?
        }
        None => SolverState::new(config.init_factors(matrix.n_rows(), matrix.n_cols()).map_err(TrainError::from)?),
    };

    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    let trace_path = args.out.join("trace.csv");
    let trace_file = File::create(&trace_path).map_err(|e| io_error(&trace_path, e))?;
    let mut trace = csv::Writer::from_writer(trace_file);
    trace
        .write_record(["iteration", "objective", "val_rmse", "elapsed_ms"])
        .map_err(|e| io_error(&trace_path, e))?;
    let mut trace_err = None;
    let report = solver::train_from(&matrix, &split, &config, state, |r| {
        let row = [
            r.iteration.to_string(),
            r.objective.to_string(),
            r.val_rmse.to_string(),
            format!("{:.3}", r.elapsed_ms),
        ];
        if let Err(e) = trace.write_record(&row).and_then(|_| Ok(trace.flush()?)) {
            trace_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = trace_err {
        return Err(io_error(&trace_path, e));
    }

    let test_rmse = factors::rmse(&report.best_factors, &matrix, &split.test).map_err(TrainError::from)?;
    let summary = TrainSummary {
        run_id: experiment::run_id(&info.digest, args.rotation, args.ki, config.seed),
        dataset: info,
        config,
        rotation: args.rotation,
        iterations_run: report.iterations_run,
        last_iteration: report.final_state.iteration,
        stop_reason: report.stop_reason,
        initial_val_rmse: report.initial_val_rmse,
        best_iteration: report.best_iteration,
        best_val_rmse: report.best_val_rmse,
        test_rmse_at_best: test_rmse,
        solver_ms: report.total_solver_ms(),
    };
    println!(
        "stopped after {} iterations ({}); lowest validation RMSE {:.5} at iteration {}, test RMSE {:.5}",
        summary.iterations_run,
        summary.stop_reason.as_str(),
        summary.best_val_rmse,
        summary.best_iteration,
        summary.test_rmse_at_best
    );
    write_json(&args.out.join("summary.json"), &summary)?;

    if let Some(path) = &args.checkpoint {
        let file = File::create(path).map_err(|e| io_error(path, e))?;
        checkpoint::write_state(BufWriter::new(file), &report.final_state).map_err(|e| io_error(path, e))?;
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let config = ExperimentConfig {
        dataset: args.dataset.dataset.clone(),
        format: args.dataset.format_spec(),
        solver: args.solver.config(0.0),
        rotations: args.rotations.clone(),
        ki_grid: args.ki_grid.clone(),
        out_dir: args.out.clone(),
    };
    let report = experiment::run_experiment(&config)?;
    print!("{}", experiment::render_summary(&report));

    let failed = report.cells.iter().filter(|c| c.metrics().is_none()).count();
    if failed > 0 {
        warn!("{failed} of {} runs failed", report.cells.len());
        if failed == report.cells.len() {
            return Err(CliError::Diverged("every run in the sweep failed".into()));
        }
    }
    Ok(())
}

fn report(args: &ReportArgs) -> Result<(), CliError> {
    let report = experiment::read_report(&args.out.join("sweep.json"))?;
    experiment::emit_report(&report, &[], &args.out)?;
    print!("{}", experiment::render_summary(&report));
    Ok(())
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("PINLF_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("PINLF_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
    };

    let result = init_threads().and_then(|_| match &cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
