//! Latent factor matrices, prediction, the density-weighted objective and RMSE.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{EntrySet, HdiMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum FactorError {
    #[error("invalid initialization range [{lo}, {hi}): need 0 <= lo < hi")]
    BadRange { lo: f64, hi: f64 },
    #[error("latent dimension must be at least 1")]
    ZeroRank,
    #[error("index ({m}, {n}) out of range for {rows}x{cols} factors")]
    OutOfRange { m: usize, n: usize, rows: usize, cols: usize },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("entry index {0} is not part of the data")]
    BadEntry(usize),
    #[error("factor shapes {x:?}/{y:?} do not match a {rows}x{cols} matrix")]
    ShapeMismatch { x: (usize, usize), y: (usize, usize), rows: usize, cols: usize },
    #[error("negative factor entry")]
    Negative,
}

/// Regularization and PI gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda: f64,
    pub kp: f64,
    pub ki: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self { lambda: 0.08, kp: 1.0, ki: 0.0 }
    }
}

impl Hyperparams {
    pub fn is_valid(&self) -> bool {
        self.lambda >= 0.0 && self.lambda.is_finite() && self.kp.is_finite() && self.ki.is_finite()
    }
}

/// Non-negative `X` (M×f) and `Y` (N×f).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl FactorPair {
    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self, FactorError> {
        if x.ncols() != y.ncols() || x.ncols() == 0 {
            return Err(FactorError::ZeroRank);
        }
        let pair = Self { x, y };
        if !pair.is_non_negative() {
            return Err(FactorError::Negative);
        }
        Ok(pair)
    }

    /// I.i.d. uniform entries on `[lo, hi)`, X drawn first, then Y, row-major.
    pub fn init(m: usize, n: usize, f: usize, seed: u64, lo: f64, hi: f64) -> Result<Self, FactorError> {
        if f == 0 {
            return Err(FactorError::ZeroRank);
        }
        if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
            return Err(FactorError::BadRange { lo, hi });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((m, f), || rng.random_range(lo..hi));
        let y = Array2::from_shape_simple_fn((n, f), || rng.random_range(lo..hi));
        Ok(Self { x, y })
    }

    pub fn rank(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_non_negative(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|&v| v >= 0.0)
    }

    /// True if any entry is strictly negative (NaN does not count).
    pub fn has_negative(&self) -> bool {
        self.x.iter().chain(self.y.iter()).any(|&v| v < 0.0)
    }

    pub fn check_shape(&self, data: &HdiMatrix) -> Result<(), FactorError> {
        if self.x.nrows() != data.n_rows() || self.y.nrows() != data.n_cols() {
            return Err(FactorError::ShapeMismatch {
                x: self.x.dim(),
                y: self.y.dim(),
                rows: data.n_rows(),
                cols: data.n_cols(),
            });
        }
        Ok(())
    }

    /// r̂[m, n] = ⟨X_m, Y_n⟩.
    pub fn predict(&self, m: usize, n: usize) -> Result<f64, FactorError> {
        if m >= self.n_rows() || n >= self.n_cols() {
            return Err(FactorError::OutOfRange { m, n, rows: self.n_rows(), cols: self.n_cols() });
        }
        Ok(self.predict_unchecked(m, n))
    }

    #[inline]
    pub(crate) fn predict_unchecked(&self, m: usize, n: usize) -> f64 {
        dot(self.x.row(m), self.y.row(n))
    }
}

/// Sequential dot product; the fixed order keeps results reproducible.
#[inline]
pub(crate) fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |acc, (p, q)| acc + p * q)
}

fn sq_norm(a: ArrayView1<f64>) -> f64 {
    a.iter().fold(0.0, |acc, v| acc + v * v)
}

fn check_set(pair: &FactorPair, data: &HdiMatrix, set: &EntrySet) -> Result<(), FactorError> {
    pair.check_shape(data)?;
    match set.indices().last() {
        Some(&last) if last >= data.len() => Err(FactorError::BadEntry(last)),
        _ => Ok(()),
    }
}

// Per-chunk partial sums are combined in chunk order, so the result does not
// depend on how many threads rayon uses.
const CHUNK: usize = 4096;

fn chunked_sum(indices: &[usize], term: impl Fn(usize) -> f64 + Sync) -> f64 {
    let partials: Vec<f64> = indices
        .par_chunks(CHUNK)
        .map(|chunk| chunk.iter().fold(0.0, |acc, &i| acc + term(i)))
        .collect();
    partials.into_iter().fold(0.0, |acc, p| acc + p)
}

/// Σ over `train` of `(r − r̂)² + λ(‖X_m‖² + ‖Y_n‖²)`.
///
/// The regularizer sits inside the per-entry sum, so row `m` is penalized
/// `|Λ(m)|` times.
pub fn objective(pair: &FactorPair, data: &HdiMatrix, train: &EntrySet, lambda: f64) -> Result<f64, FactorError> {
    check_set(pair, data, train)?;
    Ok(chunked_sum(train.indices(), |i| {
        let e = data.entry(i);
        let resid = e.value - pair.predict_unchecked(e.row, e.col);
        let mut term = resid * resid;
        if lambda != 0.0 {
            term += lambda * (sq_norm(pair.x.row(e.row)) + sq_norm(pair.y.row(e.col)));
        }
        term
    }))
}

/// Objective over every known entry of `data` (used when `data` is already the training matrix).
pub fn objective_all(pair: &FactorPair, data: &HdiMatrix, lambda: f64) -> Result<f64, FactorError> {
    objective(pair, data, &EntrySet::all(data.len()), lambda)
}

pub fn rmse(pair: &FactorPair, data: &HdiMatrix, eval_set: &EntrySet) -> Result<f64, FactorError> {
    if eval_set.is_empty() {
        return Err(FactorError::EmptyEvalSet);
    }
    check_set(pair, data, eval_set)?;
    let sse = chunked_sum(eval_set.indices(), |i| {
        let e = data.entry(i);
        let resid = e.value - pair.predict_unchecked(e.row, e.col);
        resid * resid
    });
    Ok((sse / eval_set.len() as f64).sqrt())
}
