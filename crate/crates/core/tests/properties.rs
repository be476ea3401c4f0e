mod common;

use std::collections::HashSet;

use ndarray::Array2;
use pinlf::data::{self, Delimiter, EntrySet, FormatSpec, HdiMatrix, RatingTriple, NUM_FOLDS};
use pinlf::factors::{self, FactorPair, Hyperparams};
use pinlf::oracle::{self, DenseIsnState};
use pinlf::solver::{self, Schedule, SolverState};
use proptest::prelude::*;

use common::{max_abs_diff, small_case, to_dense};

fn schedules() -> impl Strategy<Value = Schedule> {
    prop_oneof![Just(Schedule::GaussSeidel), Just(Schedule::Jacobi)]
}

fn triples(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Vec<RatingTriple>> {
    prop::collection::btree_map((0..max_rows, 0..max_cols), 0.0f64..10.0, 1..120)
        .prop_map(|cells| cells.into_iter().map(|((r, c), v)| RatingTriple::new(r, c, v)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_pass_matches_dense_oracle(seed in any::<u64>(), lambda in prop_oneof![Just(0.0), Just(0.08), 0.0f64..1.0], schedule in schedules()) {
        let case = small_case(seed);
        let mut pair = case.factors.clone();
        solver::slf_nmu_iteration(&mut pair, &case.matrix, lambda, schedule);
        let (dx, dy) = oracle::dense_nmu_step(&case.dense, &to_dense(&case.factors.x), &to_dense(&case.factors.y), lambda, schedule);
        prop_assert!(max_abs_diff(&pair.x, &dx) <= 1e-12);
        prop_assert!(max_abs_diff(&pair.y, &dy) <= 1e-12);
    }

    #[test]
    fn refined_trajectory_matches_dense_oracle(seed in any::<u64>(), ki in 0.0f64..=0.09, kp in 0.5f64..1.5, schedule in schedules()) {
        let case = small_case(seed);
        let hyper = Hyperparams { lambda: 0.08, kp, ki };
        let mut state = SolverState::new(case.factors.clone());
        let mut dense = DenseIsnState::new(to_dense(&case.factors.x), to_dense(&case.factors.y));
        for _ in 0..20 {
            solver::isn_iteration(&mut state, &case.matrix, &hyper, schedule);
            oracle::dense_isn_step(&case.dense, &mut dense, hyper.lambda, kp, ki, schedule);
        }
        prop_assert!(max_abs_diff(&state.factors.x, &dense.x) <= 1e-9);
        prop_assert!(max_abs_diff(&state.factors.y, &dense.y) <= 1e-9);
        prop_assert!(max_abs_diff(&state.accumulator.x, &dense.sum_x) <= 1e-9);
    }

    #[test]
    fn objective_matches_dense_oracle(seed in any::<u64>(), lambda in prop_oneof![Just(0.0), Just(0.08)]) {
        let case = small_case(seed);
        let sparse = factors::objective_all(&case.factors, &case.matrix, lambda).unwrap();
        let dense = oracle::dense_objective(&case.dense, &to_dense(&case.factors.x), &to_dense(&case.factors.y), lambda);
        prop_assert!((sparse - dense).abs() <= 1e-12 * dense.abs().max(1.0));
    }

    #[test]
    fn squared_rmse_is_mean_residual(seed in any::<u64>(), keep in prop::collection::vec(any::<bool>(), 64)) {
        let case = small_case(seed);
        let picked: Vec<usize> = (0..case.matrix.len()).filter(|&i| keep[i % keep.len()]).collect();
        prop_assume!(!picked.is_empty());
        let set = EntrySet::new(picked);
        let r = factors::rmse(&case.factors, &case.matrix, &set).unwrap();
        let obj = factors::objective(&case.factors, &case.matrix, &set, 0.0).unwrap();
        prop_assert!((r * r * set.len() as f64 - obj).abs() <= 1e-12 * obj.max(1e-300));
    }

    #[test]
    fn predict_is_bilinear(seed in any::<u64>(), c in 0.0f64..10.0) {
        let case = small_case(seed);
        let mut scaled = case.factors.clone();
        scaled.x.row_mut(0).mapv_inplace(|v| v * c);
        for n in 0..case.factors.n_cols() {
            let base = case.factors.predict(0, n).unwrap();
            prop_assert!((scaled.predict(0, n).unwrap() - c * base).abs() <= 1e-12 * (c * base).abs().max(1.0));
        }
    }

    #[test]
    fn index_is_coherent(cells in triples(30, 20)) {
        let m = HdiMatrix::from_triples(cells.clone()).unwrap();
        prop_assert_eq!(m.len(), cells.len());
        let by_rows: usize = (0..m.n_rows()).map(|r| m.row_len(r)).sum();
        let by_cols: usize = (0..m.n_cols()).map(|c| m.col_len(c)).sum();
        prop_assert_eq!(by_rows, m.len());
        prop_assert_eq!(by_cols, m.len());
        for r in 0..m.n_rows() {
            prop_assert!(m.row(r).iter().all(|e| e.row == r));
        }
        for c in 0..m.n_cols() {
            prop_assert!(m.col(c).all(|e| e.col == c));
        }
        let stored: HashSet<(usize, usize)> = m.entries().iter().map(|e| (e.row, e.col)).collect();
        prop_assert_eq!(stored, cells.iter().map(|e| (e.row, e.col)).collect::<HashSet<_>>());
    }

    #[test]
    fn split_partitions_entries(cells in triples(40, 40), seed in any::<u64>(), rotation in 0usize..5) {
        let m = HdiMatrix::from_triples(cells).unwrap();
        prop_assume!(m.len() >= NUM_FOLDS);
        let s = data::split_tenfold(&m, seed, rotation).unwrap();
        let sizes = s.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), m.len());
        let mut seen = vec![0u8; m.len()];
        for set in [&s.train, &s.validation, &s.test] {
            for &i in set.indices() {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let folds = |set: &EntrySet| set.indices().iter().map(|&i| s.fold_of_entry[i]).collect::<HashSet<_>>();
        prop_assert_eq!(folds(&s.train).len(), 7);
        prop_assert_eq!(folds(&s.validation).len(), 1);
        prop_assert_eq!(folds(&s.test).len(), 2);
    }

    #[test]
    fn ratings_round_trip(cells in triples(50, 50)) {
        let m = HdiMatrix::from_triples(cells).unwrap();
        for delimiter in [Delimiter::Tab, Delimiter::Comma, Delimiter::DoubleColon] {
            let mut buf = Vec::new();
            data::write_ratings(&mut buf, m.entries(), delimiter).unwrap();
            let parsed = data::parse_ratings(buf.as_slice(), &FormatSpec::new(delimiter)).unwrap();
            prop_assert_eq!(parsed.triples.len(), m.len());
            for (orig, back) in m.entries().iter().zip(&parsed.triples) {
                prop_assert_eq!(parsed.row_ids.external(back.row).map(str::to_owned), Some(orig.row.to_string()));
                prop_assert_eq!(parsed.col_ids.external(back.col).map(str::to_owned), Some(orig.col.to_string()));
                prop_assert_eq!(back.value, orig.value);
            }
        }
    }

    #[test]
    fn truncation_is_inert_when_nothing_clamps(seed in any::<u64>(), ki in 0.0f64..0.02, schedule in schedules()) {
        let case = small_case(seed);
        let hyper = Hyperparams { lambda: 0.08, kp: 1.0, ki };
        let mut state = SolverState::new(case.factors.clone());
        let mut untruncated = DenseIsnState::new(to_dense(&case.factors.x), to_dense(&case.factors.y));
        let mut clamped = 0;
        for _ in 0..10 {
            clamped += solver::isn_iteration(&mut state, &case.matrix, &hyper, schedule).truncated;
            raw_isn_step(&case.matrix, &mut untruncated, &hyper, schedule);
        }
        prop_assume!(clamped == 0);
        prop_assert!(max_abs_diff(&state.factors.x, &untruncated.x) == 0.0);
        prop_assert!(max_abs_diff(&state.factors.y, &untruncated.y) == 0.0);
    }

    #[test]
    fn objective_never_rises_without_integral_term(seed in any::<u64>(), lambda in 0.01f64..0.5, schedule in schedules()) {
        let case = small_case(seed);
        let mut pair = case.factors.clone();
        let mut prev = factors::objective_all(&pair, &case.matrix, lambda).unwrap();
        for _ in 0..50 {
            solver::slf_nmu_iteration(&mut pair, &case.matrix, lambda, schedule);
            let now = factors::objective_all(&pair, &case.matrix, lambda).unwrap();
            // Jacobi updates both sides at once and carries no monotonicity guarantee
            if schedule == Schedule::GaussSeidel {
                prop_assert!(now <= prev * (1.0 + 1e-9) + 1e-12, "{} -> {}", prev, now);
            }
            prev = now;
        }
    }

    #[test]
    fn refined_factors_stay_non_negative(seed in any::<u64>(), ki in 0.0f64..=0.09, schedule in schedules()) {
        let case = small_case(seed);
        let mut values: Vec<RatingTriple> = case.matrix.entries().to_vec();
        for v in &mut values {
            v.value *= 40.0;
        }
        let matrix = HdiMatrix::with_shape(case.matrix.n_rows(), case.matrix.n_cols(), values).unwrap();
        let hyper = Hyperparams { lambda: 0.08, kp: 1.0, ki };
        let mut state = SolverState::new(case.factors.clone());
        for _ in 0..50 {
            solver::isn_iteration(&mut state, &matrix, &hyper, schedule);
            prop_assert!(state.factors.is_non_negative());
        }
    }
}

/// The refined step without the clamp, composed from the public pieces.
fn raw_isn_step(matrix: &HdiMatrix, s: &mut DenseIsnState, hyper: &Hyperparams, schedule: Schedule) {
    let to_array = |d: &Vec<Vec<f64>>| {
        let cols = d.first().map_or(0, |r| r.len());
        Array2::from_shape_vec((d.len(), cols), d.concat()).unwrap()
    };
    let step = |cur: &mut Vec<Vec<f64>>, exp: &Array2<f64>, acc: &mut Vec<Vec<f64>>| {
        for (i, row) in cur.iter_mut().enumerate() {
            for (d, v) in row.iter_mut().enumerate() {
                let (raw, next) = solver::refine_scalar(*v, exp[[i, d]], acc[i][d], hyper.kp, hyper.ki);
                acc[i][d] = next;
                *v = raw;
            }
        }
    };
    let pair = FactorPair { x: to_array(&s.x), y: to_array(&s.y) };
    let ex = solver::nmu_expected_x(&pair, matrix, hyper.lambda);
    match schedule {
        Schedule::GaussSeidel => {
            step(&mut s.x, &ex, &mut s.sum_x);
            let mid = FactorPair { x: to_array(&s.x), y: pair.y };
            let ey = solver::nmu_expected_y(&mid, matrix, hyper.lambda);
            step(&mut s.y, &ey, &mut s.sum_y);
        }
        Schedule::Jacobi => {
            let ey = solver::nmu_expected_y(&pair, matrix, hyper.lambda);
            step(&mut s.x, &ex, &mut s.sum_x);
            step(&mut s.y, &ey, &mut s.sum_y);
        }
    }
}

#[test]
fn shared_seed_gives_identical_initial_factors() {
    let a = FactorPair::init(30, 20, 4, 77, 0.0, 0.5).unwrap();
    let b = FactorPair::init(30, 20, 4, 77, 0.0, 0.5).unwrap();
    assert_eq!(a, b);
}
