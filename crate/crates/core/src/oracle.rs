//! Dense, loop-by-loop reference implementations for checking the sparse solver.
//!
//! Nothing here calls into `factors` or `solver`; every formula is written out
//! again over plain nested `Vec`s. Keep it slow and obvious. It is meant for
//! matrices of at most a few dozen rows and columns.

use crate::data::RatingTriple;
use crate::solver::Schedule;

pub type DenseMatrix = Vec<Vec<f64>>;

/// A small matrix with unknown cells stored as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseInstance {
    pub values: Vec<Vec<Option<f64>>>,
}

impl DenseInstance {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self { values: vec![vec![None; n_cols]; n_rows] }
    }

    pub fn from_triples<'a>(n_rows: usize, n_cols: usize, triples: impl IntoIterator<Item = &'a RatingTriple>) -> Self {
        let mut inst = Self::new(n_rows, n_cols);
        for t in triples {
            inst.values[t.row][t.col] = Some(t.value);
        }
        inst
    }

    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn n_cols(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn mask(&self) -> Vec<Vec<bool>> {
        self.values.iter().map(|row| row.iter().map(Option::is_some).collect()).collect()
    }
}

fn estimate(x: &DenseMatrix, y: &DenseMatrix, m: usize, n: usize) -> f64 {
    let mut s = 0.0;
    for d in 0..x[m].len() {
        s += x[m][d] * y[n][d];
    }
    s
}

/// Σ over known cells of `(r − r̂)² + λ(Σ_d x_md² + Σ_d y_nd²)`.
pub fn dense_objective(inst: &DenseInstance, x: &DenseMatrix, y: &DenseMatrix, lambda: f64) -> f64 {
    let mut total = 0.0;
    for m in 0..inst.n_rows() {
        for n in 0..inst.n_cols() {
            if let Some(r) = inst.values[m][n] {
                let e = r - estimate(x, y, m, n);
                let mut reg = 0.0;
                for d in 0..x[m].len() {
                    reg += x[m][d] * x[m][d];
                    reg += y[n][d] * y[n][d];
                }
                total += e * e + lambda * reg;
            }
        }
    }
    total
}

fn dense_update_x(inst: &DenseInstance, x: &DenseMatrix, y: &DenseMatrix, lambda: f64) -> DenseMatrix {
    let mut out = x.clone();
    for m in 0..inst.n_rows() {
        let count = (0..inst.n_cols()).filter(|&n| inst.values[m][n].is_some()).count();
        if count == 0 {
            continue;
        }
        for d in 0..x[m].len() {
            let mut up = 0.0;
            let mut down = 0.0;
            for n in 0..inst.n_cols() {
                if let Some(r) = inst.values[m][n] {
                    up += y[n][d] * r;
                    down += y[n][d] * estimate(x, y, m, n);
                }
            }
            down += lambda * count as f64 * x[m][d];
            if down != 0.0 {
                out[m][d] = x[m][d] * up / down;
            }
        }
    }
    out
}

fn dense_update_y(inst: &DenseInstance, x: &DenseMatrix, y: &DenseMatrix, lambda: f64) -> DenseMatrix {
    let mut out = y.clone();
    for n in 0..inst.n_cols() {
        let count = (0..inst.n_rows()).filter(|&m| inst.values[m][n].is_some()).count();
        if count == 0 {
            continue;
        }
        for d in 0..y[n].len() {
            let mut up = 0.0;
            let mut down = 0.0;
            for m in 0..inst.n_rows() {
                if let Some(r) = inst.values[m][n] {
                    up += x[m][d] * r;
                    down += x[m][d] * estimate(x, y, m, n);
                }
            }
            down += lambda * count as f64 * y[n][d];
            if down != 0.0 {
                out[n][d] = y[n][d] * up / down;
            }
        }
    }
    out
}

/// One multiplicative pass. Gauss–Seidel updates Y against the new X.
pub fn dense_nmu_step(
    inst: &DenseInstance,
    x: &DenseMatrix,
    y: &DenseMatrix,
    lambda: f64,
    schedule: Schedule,
) -> (DenseMatrix, DenseMatrix) {
    let x_new = dense_update_x(inst, x, y, lambda);
    let y_new = match schedule {
        Schedule::GaussSeidel => dense_update_y(inst, &x_new, y, lambda),
        Schedule::Jacobi => dense_update_y(inst, x, y, lambda),
    };
    (x_new, y_new)
}

/// Dense state for [`dense_isn_step`]: factors plus running increment sums.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIsnState {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
    pub sum_x: DenseMatrix,
    pub sum_y: DenseMatrix,
}

impl DenseIsnState {
    pub fn new(x: DenseMatrix, y: DenseMatrix) -> Self {
        let sum_x = x.iter().map(|r| vec![0.0; r.len()]).collect();
        let sum_y = y.iter().map(|r| vec![0.0; r.len()]).collect();
        Self { x, y, sum_x, sum_y }
    }
}

fn refine_dense(cur: &mut DenseMatrix, target: &DenseMatrix, sum: &mut DenseMatrix, kp: f64, ki: f64) {
    for i in 0..cur.len() {
        for d in 0..cur[i].len() {
            let inc = target[i][d] - cur[i][d];
            sum[i][d] += inc;
            let next = cur[i][d] + kp * inc + ki * sum[i][d];
            cur[i][d] = if next < 0.0 { 0.0 } else { next };
        }
    }
}

/// One refined iteration over dense loops.
pub fn dense_isn_step(inst: &DenseInstance, state: &mut DenseIsnState, lambda: f64, kp: f64, ki: f64, schedule: Schedule) {
    match schedule {
        Schedule::GaussSeidel => {
            let tx = dense_update_x(inst, &state.x, &state.y, lambda);
            refine_dense(&mut state.x, &tx, &mut state.sum_x, kp, ki);
            let ty = dense_update_y(inst, &state.x, &state.y, lambda);
            refine_dense(&mut state.y, &ty, &mut state.sum_y, kp, ki);
        }
        Schedule::Jacobi => {
            let tx = dense_update_x(inst, &state.x, &state.y, lambda);
            let ty = dense_update_y(inst, &state.x, &state.y, lambda);
            refine_dense(&mut state.x, &tx, &mut state.sum_x, kp, ki);
            refine_dense(&mut state.y, &ty, &mut state.sum_y, kp, ki);
        }
    }
}

/// One step of the 1×1, rank-1 refined recurrence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarStep {
    pub x: f64,
    pub y: f64,
    pub sum_x: f64,
    pub sum_y: f64,
}

/// Exact scalar trajectory of the refined update for a single known value `r`
/// (alternating: x first, then y against the new x).
pub fn scalar_isn_recurrence(r: f64, x0: f64, y0: f64, lambda: f64, kp: f64, ki: f64, steps: usize) -> Vec<ScalarStep> {
    let (mut x, mut y, mut sx, mut sy) = (x0, y0, 0.0, 0.0);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let den = y * (x * y) + lambda * x;
        let tx = if den == 0.0 { x } else { x * (y * r) / den };
        sx += tx - x;
        x = (x + kp * (tx - x) + ki * sx).max(0.0);

        let den = x * (x * y) + lambda * y;
        let ty = if den == 0.0 { y } else { y * (x * r) / den };
        sy += ty - y;
        y = (y + kp * (ty - y) + ki * sy).max(0.0);

        out.push(ScalarStep { x, y, sum_x: sx, sum_y: sy });
    }
    out
}
