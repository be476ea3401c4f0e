//! Seeded low-rank sparse instances for tests and benchmarks.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataError, HdiMatrix, RatingTriple};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowRankSpec {
    pub n_rows: usize,
    pub n_cols: usize,
    pub rank: usize,
    /// Fraction of cells that are known.
    pub density: f64,
    /// Ground-truth factor entries are uniform on `[0, factor_scale)`.
    pub factor_scale: f64,
    /// Known values get uniform noise on `[-noise, noise)`, clamped at zero.
    pub noise: f64,
    pub seed: u64,
}

impl LowRankSpec {
    /// 500×300, rank 5, 2% known, values roughly on a 0–5 rating scale.
    pub fn desk_scale() -> Self {
        Self {
            n_rows: 500,
            n_cols: 300,
            rank: 5,
            density: 0.02,
            factor_scale: 1.55,
            noise: 0.25,
            seed: 20_240_301,
        }
    }

    pub fn generate(&self) -> Result<HdiMatrix, DataError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let u: Vec<f64> = (0..self.n_rows * self.rank).map(|_| rng.random_range(0.0..self.factor_scale)).collect();
        let v: Vec<f64> = (0..self.n_cols * self.rank).map(|_| rng.random_range(0.0..self.factor_scale)).collect();

        let cells = self.n_rows * self.n_cols;
        let count = ((cells as f64) * self.density).round().clamp(0.0, cells as f64) as usize;
        let mut picked = index::sample(&mut rng, cells, count).into_vec();
        picked.sort_unstable();

        let triples = picked
            .into_iter()
            .map(|cell| {
                let (m, n) = (cell / self.n_cols, cell % self.n_cols);
                let clean: f64 = (0..self.rank).map(|d| u[m * self.rank + d] * v[n * self.rank + d]).sum();
                let jitter = if self.noise > 0.0 { rng.random_range(-self.noise..self.noise) } else { 0.0 };
                RatingTriple::new(m, n, (clean + jitter).max(0.0))
            })
            .collect();
        HdiMatrix::with_shape(self.n_rows, self.n_cols, triples)
    }
}
