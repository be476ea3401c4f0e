//! Multiplicative non-negative updates and the PI increment-refinement solver.
//!
//! One training iteration computes the multiplicative "expected" state of a
//! factor matrix, takes the raw increment `Δ = expected − current`, folds it
//! into a running sum `S`, and applies
//!
//! ```text
//! next = max(0, current + kp·Δ + ki·S)
//! ```
//!
//! With `kp = 1, ki = 0` this is exactly the plain multiplicative update.

use std::time::Instant;

use ndarray::parallel::prelude::*;
use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, HdiMatrix, SplitAssignment};
use crate::factors::{self, FactorError, FactorPair, Hyperparams};

/// Range of integral gains that has been validated in practice.
pub const VALIDATED_KI: (f64, f64) = (0.0, 0.09);

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at iteration {iteration}: objective {objective}, validation RMSE {val_rmse}")]
    Diverged { iteration: usize, objective: f64, val_rmse: f64 },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Whether the Y half-step sees the freshly refined X or the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    GaussSeidel,
    Jacobi,
}

impl std::str::FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gauss-seidel" => Ok(Schedule::GaussSeidel),
            "jacobi" => Ok(Schedule::Jacobi),
            other => Err(format!("unknown schedule {other:?} (expected gauss-seidel or jacobi)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub hyper: Hyperparams,
    /// Latent dimension f.
    pub rank: usize,
    pub max_iters: usize,
    /// Training stops once consecutive validation RMSEs differ by less than this.
    pub error_threshold: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub init_range: (f64, f64),
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::default(),
            rank: 20,
            max_iters: 1000,
            error_threshold: 1e-5,
            schedule: Schedule::GaussSeidel,
            seed: 1,
            init_range: (0.0, 0.5),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.hyper.is_valid() {
            return Err(TrainError::Config(format!("bad hyperparameters {:?}", self.hyper)));
        }
        if self.rank == 0 {
            return Err(TrainError::Config("rank must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(TrainError::Config("max_iters must be >= 1".into()));
        }
        if !(self.error_threshold >= 0.0 && self.error_threshold.is_finite()) {
            return Err(TrainError::Config(format!("bad error threshold {}", self.error_threshold)));
        }
        let (lo, hi) = self.init_range;
        if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
            return Err(TrainError::Config(format!("bad init range [{lo}, {hi})")));
        }
        Ok(())
    }

    pub fn init_factors(&self, n_rows: usize, n_cols: usize) -> Result<FactorPair, FactorError> {
        FactorPair::init(n_rows, n_cols, self.rank, self.seed, self.init_range.0, self.init_range.1)
    }
}

/// Running sums of raw multiplicative increments, one per factor matrix.
///
/// Starts at zero, so the first iteration's integral term is just the first
/// increment.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementAccumulator {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl IncrementAccumulator {
    pub fn zeros_like(pair: &FactorPair) -> Self {
        Self { x: Array2::zeros(pair.x.raw_dim()), y: Array2::zeros(pair.y.raw_dim()) }
    }
}

/// Everything the training loop carries between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub factors: FactorPair,
    pub accumulator: IncrementAccumulator,
    /// Number of completed iterations.
    pub iteration: usize,
}

impl SolverState {
    pub fn new(factors: FactorPair) -> Self {
        let accumulator = IncrementAccumulator::zeros_like(&factors);
        Self { factors, accumulator, iteration: 0 }
    }
}

/// Multiplicative update for one side.
///
/// `slice(i)` yields `(j, r_ij)` for the known entries touching node `i`;
/// `own` is the side being updated and `other` the fixed side.
fn expected_side<F, I>(own: &Array2<f64>, other: &Array2<f64>, lambda: f64, slice: F) -> Array2<f64>
where
    F: Fn(usize) -> I + Sync,
    I: ExactSizeIterator<Item = (usize, f64)>,
{
    let f = own.ncols();
    let mut out = own.clone();
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each_init(
            || (vec![0.0; f], vec![0.0; f]),
            |(num, den), (i, mut row)| {
                let entries = slice(i);
                let count = entries.len();
                if count == 0 {
                    return;
                }
                num.fill(0.0);
                den.fill(0.0);
                let own_row = own.row(i);
                for (j, r) in entries {
                    let other_row = other.row(j);
                    let pred = factors::dot(own_row, other_row);
                    for d in 0..f {
                        num[d] += other_row[d] * r;
                        den[d] += other_row[d] * pred;
                    }
                }
                apply_ratio(&mut row, own_row, num, den, lambda * count as f64);
            },
        );
    out
}

#[inline]
fn apply_ratio(out: &mut ArrayViewMut1<f64>, own: ArrayView1<f64>, num: &[f64], den: &[f64], reg: f64) {
    for d in 0..own.len() {
        let v = own[d];
        let denom = den[d] + reg * v;
        // 0/0 and x/0 leave the entry where it is
        if denom != 0.0 {
            out[d] = v * num[d] / denom;
        }
    }
}

/// Multiplicative expected state of X given Y, over the known entries of `train`.
pub fn nmu_expected_x(pair: &FactorPair, train: &HdiMatrix, lambda: f64) -> Array2<f64> {
    expected_side(&pair.x, &pair.y, lambda, |m| train.row(m).iter().map(|e| (e.col, e.value)))
}

/// Multiplicative expected state of Y given X, over the known entries of `train`.
pub fn nmu_expected_y(pair: &FactorPair, train: &HdiMatrix, lambda: f64) -> Array2<f64> {
    expected_side(&pair.y, &pair.x, lambda, |n| train.col(n).map(|e| (e.row, e.value)))
}

/// The PI combination for one scalar, before truncation.
///
/// Returns `(raw_next, accumulator')`. Written as
/// `kp·expected + (1 − kp)·current + ki·S'`, which equals
/// `current + kp·Δ + ki·S'` and reduces to `expected` bit-for-bit when
/// `kp = 1, ki = 0`.
#[inline]
pub fn refine_scalar(current: f64, expected: f64, accumulator: f64, kp: f64, ki: f64) -> (f64, f64) {
    let delta = expected - current;
    let acc = accumulator + delta;
    let raw = kp * expected + (1.0 - kp) * current + ki * acc;
    (raw, acc)
}

/// Apply one refined step in place: updates `current` to the truncated next
/// state and adds the raw increment to `accumulator`. Returns how many entries
/// were clamped to zero.
pub fn refine_and_apply(
    current: &mut Array2<f64>,
    expected: &Array2<f64>,
    accumulator: &mut Array2<f64>,
    kp: f64,
    ki: f64,
) -> usize {
    assert_eq!(current.dim(), expected.dim(), "expected state shape mismatch");
    assert_eq!(current.dim(), accumulator.dim(), "accumulator shape mismatch");
    Zip::from(current)
        .and(expected)
        .and(accumulator)
        .par_map_collect(|cur, &exp, acc| {
            let (raw, next_acc) = refine_scalar(*cur, exp, *acc, kp, ki);
            *acc = next_acc;
            if raw < 0.0 {
                *cur = 0.0;
                1usize
            } else {
                *cur = raw;
                0
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IterationStats {
    /// Entries clamped to zero by the non-negativity truncation.
    pub truncated: usize,
}

/// One ISN iteration: expected states from the multiplicative rule, then the
/// PI refinement with truncation, under the configured schedule.
pub fn isn_iteration(state: &mut SolverState, train: &HdiMatrix, hyper: &Hyperparams, schedule: Schedule) -> IterationStats {
    let Hyperparams { lambda, kp, ki } = *hyper;
    let mut truncated = 0;
    match schedule {
        Schedule::GaussSeidel => {
            let ex = nmu_expected_x(&state.factors, train, lambda);
            truncated += refine_and_apply(&mut state.factors.x, &ex, &mut state.accumulator.x, kp, ki);
            let ey = nmu_expected_y(&state.factors, train, lambda);
            truncated += refine_and_apply(&mut state.factors.y, &ey, &mut state.accumulator.y, kp, ki);
        }
        Schedule::Jacobi => {
            let ex = nmu_expected_x(&state.factors, train, lambda);
            let ey = nmu_expected_y(&state.factors, train, lambda);
            truncated += refine_and_apply(&mut state.factors.x, &ex, &mut state.accumulator.x, kp, ki);
            truncated += refine_and_apply(&mut state.factors.y, &ey, &mut state.accumulator.y, kp, ki);
        }
    }
    state.iteration += 1;
    // NaN passes here and is reported as divergence by the training loop
    debug_assert!(!state.factors.has_negative());
    IterationStats { truncated }
}

/// One plain multiplicative pass with no refinement.
pub fn slf_nmu_iteration(pair: &mut FactorPair, train: &HdiMatrix, lambda: f64, schedule: Schedule) {
    match schedule {
        Schedule::GaussSeidel => {
            pair.x = nmu_expected_x(pair, train, lambda);
            pair.y = nmu_expected_y(pair, train, lambda);
        }
        Schedule::Jacobi => {
            let ex = nmu_expected_x(pair, train, lambda);
            pair.y = nmu_expected_y(pair, train, lambda);
            pair.x = ex;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub val_rmse: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    IterationThreshold,
    ErrorThreshold,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::IterationThreshold => "iteration-threshold",
            StopReason::ErrorThreshold => "error-threshold",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub iterations_run: usize,
    pub initial_val_rmse: f64,
    pub per_iteration: Vec<IterationRecord>,
    pub stop_reason: StopReason,
    /// State at the stopping point; can be checkpointed and resumed.
    pub final_state: SolverState,
    /// Iteration with the lowest validation RMSE (0 means the starting point).
    pub best_iteration: usize,
    pub best_val_rmse: f64,
    pub best_factors: FactorPair,
}

impl TrainReport {
    pub fn final_factors(&self) -> &FactorPair {
        &self.final_state.factors
    }

    /// First iteration whose validation RMSE is at or below `target`.
    pub fn iterations_to_reach(&self, target: f64) -> Option<usize> {
        self.per_iteration.iter().find(|r| r.val_rmse <= target).map(|r| r.iteration)
    }

    pub fn total_solver_ms(&self) -> f64 {
        self.per_iteration.iter().map(|r| r.elapsed_ms).sum()
    }
}

/// Train from fresh factors drawn per `config`.
pub fn train(data: &HdiMatrix, split: &SplitAssignment, config: &SolverConfig) -> Result<TrainReport, TrainError> {
    config.validate()?;
    let init = config.init_factors(data.n_rows(), data.n_cols())?;
    train_from(data, split, config, SolverState::new(init), |_| {})
}

/// Continue training from `state`, calling `on_iteration` after each record.
///
/// Objective is measured on the training entries, RMSE on the validation set.
pub fn train_from(
    data: &HdiMatrix,
    split: &SplitAssignment,
    config: &SolverConfig,
    mut state: SolverState,
    mut on_iteration: impl FnMut(&IterationRecord),
) -> Result<TrainReport, TrainError> {
    config.validate()?;
    state.factors.check_shape(data)?;
    if state.factors.rank() != config.rank {
        return Err(TrainError::Config(format!(
            "state has rank {} but config asks for {}",
            state.factors.rank(),
            config.rank
        )));
    }
    let (lo, hi) = VALIDATED_KI;
    if !(lo..=hi).contains(&config.hyper.ki) {
        log::warn!("ki = {} is outside the validated range [{lo}, {hi}]", config.hyper.ki);
    }

    let train_data = data.restrict(&split.train)?;
    let hyper = config.hyper;
    let initial_val_rmse = factors::rmse(&state.factors, data, &split.validation)?;

    let start_iter = state.iteration;
    let mut per_iteration = Vec::with_capacity(config.max_iters.min(4096));
    let mut best_iteration = start_iter;
    let mut best_val_rmse = initial_val_rmse;
    let mut best_factors = state.factors.clone();
    let mut prev = initial_val_rmse;
    let mut stop_reason = StopReason::IterationThreshold;

    for _ in 0..config.max_iters {
        let t0 = Instant::now();
        isn_iteration(&mut state, &train_data, &hyper, config.schedule);
        let elapsed_ms = t0.elapsed().as_secs_f64() * 1e3;

        let objective = factors::objective_all(&state.factors, &train_data, hyper.lambda)?;
        let val_rmse = factors::rmse(&state.factors, data, &split.validation)?;
        if !objective.is_finite() || !val_rmse.is_finite() {
            return Err(TrainError::Diverged { iteration: state.iteration, objective, val_rmse });
        }
        let record = IterationRecord { iteration: state.iteration, objective, val_rmse, elapsed_ms };
        on_iteration(&record);
        per_iteration.push(record);

        if val_rmse < best_val_rmse {
            best_val_rmse = val_rmse;
            best_iteration = state.iteration;
            best_factors = state.factors.clone();
        }
        if (val_rmse - prev).abs() < config.error_threshold {
            stop_reason = StopReason::ErrorThreshold;
            break;
        }
        prev = val_rmse;
    }

    Ok(TrainReport {
        iterations_run: per_iteration.len(),
        initial_val_rmse,
        per_iteration,
        stop_reason,
        final_state: state,
        best_iteration,
        best_val_rmse,
        best_factors,
    })
}

/// Write a per-iteration trace as CSV: `iteration,objective,val_rmse,elapsed_ms`.
pub fn write_trace<W: std::io::Write>(writer: W, records: &[IterationRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "objective", "val_rmse", "elapsed_ms"])?;
    for r in records {
        w.write_record(&[
            r.iteration.to_string(),
            r.objective.to_string(),
            r.val_rmse.to_string(),
            format!("{:.3}", r.elapsed_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}
