//! Binary checkpoints of solver state and CSV dumps of factor matrices.
//!
//! Layout (all integers `u64` little-endian, values `f64` little-endian):
//!
//! ```text
//! magic  b"PINLFCK1"
//! iteration
//! flags          bit 0: accumulator present
//! X  rows cols values...   (row-major)
//! Y  rows cols values...
//! [S_X rows cols values...]
//! [S_Y rows cols values...]
//! ```

use std::io::{self, Read, Write};

use ndarray::Array2;
use thiserror::Error;

use crate::factors::{FactorError, FactorPair};
use crate::solver::{IncrementAccumulator, SolverState};

const MAGIC: &[u8; 8] = b"PINLFCK1";
const HAS_ACCUMULATOR: u64 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> io::Result<()> {
    write_u64(w, m.nrows() as u64)?;
    write_u64(w, m.ncols() as u64)?;
    for v in m.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R) -> Result<Array2<f64>, CheckpointError> {
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| CheckpointError::Corrupt(format!("shape {rows}x{cols} overflows")))?;
    let mut values = Vec::with_capacity(len.min(1 << 24));
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

pub fn write_state<W: Write>(mut w: W, state: &SolverState) -> io::Result<()> {
    w.write_all(MAGIC)?;
    write_u64(&mut w, state.iteration as u64)?;
    write_u64(&mut w, HAS_ACCUMULATOR)?;
    write_matrix(&mut w, &state.factors.x)?;
    write_matrix(&mut w, &state.factors.y)?;
    write_matrix(&mut w, &state.accumulator.x)?;
    write_matrix(&mut w, &state.accumulator.y)?;
    w.flush()
}

/// Factors only; reads back as a state with a zero accumulator.
pub fn write_factors<W: Write>(mut w: W, pair: &FactorPair) -> io::Result<()> {
    w.write_all(MAGIC)?;
    write_u64(&mut w, 0)?;
    write_u64(&mut w, 0)?;
    write_matrix(&mut w, &pair.x)?;
    write_matrix(&mut w, &pair.y)?;
    w.flush()
}

pub fn read_state<R: Read>(mut r: R) -> Result<SolverState, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let iteration = read_u64(&mut r)? as usize;
    let flags = read_u64(&mut r)?;
    let factors = FactorPair::new(read_matrix(&mut r)?, read_matrix(&mut r)?)?;
    let accumulator = if flags & HAS_ACCUMULATOR != 0 {
        let acc = IncrementAccumulator { x: read_matrix(&mut r)?, y: read_matrix(&mut r)? };
        if acc.x.dim() != factors.x.dim() || acc.y.dim() != factors.y.dim() {
            return Err(CheckpointError::Corrupt("accumulator shape does not match factors".into()));
        }
        acc
    } else {
        IncrementAccumulator::zeros_like(&factors)
    };
    Ok(SolverState { factors, accumulator, iteration })
}

/// CSV dump of one factor matrix: a `rows,cols` header line, then one line per row.
pub fn write_matrix_csv<W: Write>(mut w: W, m: &Array2<f64>) -> io::Result<()> {
    writeln!(w, "{},{}", m.nrows(), m.ncols())?;
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_matrix_csv<R: io::BufRead>(r: R) -> Result<Array2<f64>, CheckpointError> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| CheckpointError::Corrupt("missing header".into()))??;
    let dims: Vec<usize> = header
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    let [rows, cols] = dims[..] else {
        return Err(CheckpointError::Corrupt(format!("header {header:?}")));
    };
    let mut values = Vec::with_capacity(rows * cols);
    for line in lines.take(rows) {
        let line = line?;
        for field in line.split(',') {
            values.push(field.trim().parse::<f64>().map_err(|e| CheckpointError::Corrupt(e.to_string()))?);
        }
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}
