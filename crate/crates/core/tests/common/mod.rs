#![allow(dead_code)]

use ndarray::Array2;
use pinlf::data::{HdiMatrix, RatingTriple};
use pinlf::oracle::{DenseInstance, DenseMatrix};
use pinlf::FactorPair;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small random instance: the sparse matrix, the same data densely, and factors.
pub struct SmallCase {
    pub matrix: HdiMatrix,
    pub dense: DenseInstance,
    pub factors: FactorPair,
}

/// M, N in 1..=8, f in 1..=3, each cell known with probability in [0.3, 1].
/// Roughly one factor entry in ten is exactly zero.
pub fn small_case(seed: u64) -> SmallCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(1..=8);
    let n = rng.random_range(1..=8);
    let f = rng.random_range(1..=3);
    let density = rng.random_range(0.3..=1.0);
    let mut triples = Vec::new();
    for row in 0..m {
        for col in 0..n {
            if rng.random_bool(density) {
                triples.push(RatingTriple::new(row, col, rng.random_range(0.0..5.0)));
            }
        }
    }
    if triples.is_empty() {
        triples.push(RatingTriple::new(0, 0, rng.random_range(0.0..5.0)));
    }
    let mut draw = |rows: usize| {
        Array2::from_shape_simple_fn((rows, f), || if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) })
    };
    let factors = FactorPair::new(draw(m), draw(n)).unwrap();
    let dense = DenseInstance::from_triples(m, n, &triples);
    let matrix = HdiMatrix::with_shape(m, n, triples).unwrap();
    SmallCase { matrix, dense, factors }
}

pub fn to_dense(a: &Array2<f64>) -> DenseMatrix {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn max_abs_diff(a: &Array2<f64>, b: &DenseMatrix) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in b.iter().enumerate() {
        for (d, v) in row.iter().enumerate() {
            worst = worst.max((a[[i, d]] - v).abs());
        }
    }
    worst
}
