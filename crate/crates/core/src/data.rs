//! Rating-triple ingestion, the dual-indexed sparse matrix, and ten-way splits.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of disjoint folds the known entries are split into.
pub const NUM_FOLDS: usize = 10;
/// Folds `0..TRAIN_FOLDS` form the training set.
pub const TRAIN_FOLDS: usize = 7;
/// The fold used for validation; the remaining two are the test set.
pub const VALIDATION_FOLD: usize = 7;
/// Rotations are reshuffles, indexed `0..NUM_ROTATIONS`.
pub const NUM_ROTATIONS: usize = 5;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: negative value {value}")]
    NegativeValue { line: usize, value: f64 },
    #[error("non-finite or negative value {value} at ({row}, {col})")]
    InvalidValue { row: usize, col: usize, value: f64 },
    #[error("duplicate coordinate ({row}, {col})")]
    Duplicate { row: usize, col: usize },
    #[error("need at least {NUM_FOLDS} known entries to split, got {0}")]
    TooFewEntries(usize),
    #[error("rotation {0} out of range 0..{NUM_ROTATIONS}")]
    BadRotation(usize),
    #[error("entry index {index} out of range for {len} entries")]
    BadEntryIndex { index: usize, len: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A single known interaction `r[row, col] = value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingTriple {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl RatingTriple {
    pub fn new(row: usize, col: usize, value: f64) -> Self {
        Self { row, col, value }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Delimiter {
    Tab,
    Comma,
    /// The literal `::` used by the MovieLens 1M/10M dumps.
    DoubleColon,
}

impl Delimiter {
    pub fn as_str(self) -> &'static str {
        match self {
            Delimiter::Tab => "\t",
            Delimiter::Comma => ",",
            Delimiter::DoubleColon => "::",
        }
    }
}

/// Layout of a delimited rating file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatSpec {
    pub delimiter: Delimiter,
    pub row_field: usize,
    pub col_field: usize,
    pub value_field: usize,
    pub has_header: bool,
}

impl FormatSpec {
    /// `row, col, value` in the first three fields, no header.
    pub fn new(delimiter: Delimiter) -> Self {
        Self {
            delimiter,
            row_field: 0,
            col_field: 1,
            value_field: 2,
            has_header: false,
        }
    }

    pub fn with_header(mut self, has_header: bool) -> Self {
        self.has_header = has_header;
        self
    }

    fn min_fields(&self) -> usize {
        1 + self.row_field.max(self.col_field).max(self.value_field)
    }
}

/// Maps external ids to dense 0-based indices in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IdMap {
    ids: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl IdMap {
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&idx) = self.lookup.get(id) {
            return idx;
        }
        let idx = self.ids.len();
        self.ids.push(id.to_owned());
        self.lookup.insert(id.to_owned(), idx);
        idx
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn external(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Output of [`parse_ratings`]: dense triples plus the id maps used to build them.
#[derive(Debug, Clone, Default)]
pub struct ParsedRatings {
    pub triples: Vec<RatingTriple>,
    pub row_ids: IdMap,
    pub col_ids: IdMap,
}

/// Parse a delimited rating stream. Blank lines are skipped and fields past the
/// ones named in `format` (timestamps etc.) are ignored.
pub fn parse_ratings<R: BufRead>(reader: R, format: &FormatSpec) -> Result<ParsedRatings, DataError> {
    let mut out = ParsedRatings::default();
    let delim = format.delimiter.as_str();
    let need = format.min_fields();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if i == 0 && format.has_header {
            continue;
        }
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(delim).map(str::trim).collect();
        if fields.len() < need {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("expected at least {need} fields, found {}", fields.len()),
            });
        }
        let row_id = fields[format.row_field];
        let col_id = fields[format.col_field];
        if row_id.is_empty() || col_id.is_empty() {
            return Err(DataError::Parse {
                line: line_no,
                message: "empty id field".into(),
            });
        }
        let raw = fields[format.value_field];
        let value: f64 = raw.parse().map_err(|_| DataError::Parse {
            line: line_no,
            message: format!("non-numeric value {raw:?}"),
        })?;
        if !value.is_finite() {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("non-finite value {raw:?}"),
            });
        }
        if value < 0.0 {
            return Err(DataError::NegativeValue { line: line_no, value });
        }
        let row = out.row_ids.intern(row_id);
        let col = out.col_ids.intern(col_id);
        out.triples.push(RatingTriple { row, col, value });
    }
    Ok(out)
}

/// Write triples back out in `row<delim>col<delim>value` form using dense indices.
pub fn write_ratings<W: std::io::Write>(
    mut writer: W,
    triples: &[RatingTriple],
    delimiter: Delimiter,
) -> std::io::Result<()> {
    let d = delimiter.as_str();
    for t in triples {
        writeln!(writer, "{}{d}{}{d}{}", t.row, t.col, t.value)?;
    }
    Ok(())
}

/// A subset of entry positions of an [`HdiMatrix`], kept sorted and unique.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntrySet(Vec<usize>);

impl EntrySet {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn all(len: usize) -> Self {
        Self((0..len).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }
}

/// Sparse non-negative matrix holding only its known entries, indexed both by
/// row and by column.
///
/// Entries are stored sorted by `(row, col)`, so the row slices are contiguous
/// runs of `entries`. The column view is a permutation of entry positions sorted
/// by `(col, row)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HdiMatrix {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<RatingTriple>,
    row_ptr: Vec<usize>,
    col_ptr: Vec<usize>,
    col_order: Vec<usize>,
}

impl HdiMatrix {
    /// Build from triples; dimensions are `1 + max index` along each axis.
    pub fn from_triples(triples: Vec<RatingTriple>) -> Result<Self, DataError> {
        let n_rows = triples.iter().map(|t| t.row + 1).max().unwrap_or(0);
        let n_cols = triples.iter().map(|t| t.col + 1).max().unwrap_or(0);
        Self::with_shape(n_rows, n_cols, triples)
    }

    /// Build with explicit dimensions, which may exceed the largest index present.
    pub fn with_shape(n_rows: usize, n_cols: usize, mut triples: Vec<RatingTriple>) -> Result<Self, DataError> {
        for t in &triples {
            if !(t.value.is_finite() && t.value >= 0.0) {
                return Err(DataError::InvalidValue { row: t.row, col: t.col, value: t.value });
            }
            if t.row >= n_rows || t.col >= n_cols {
                return Err(DataError::BadEntryIndex {
                    index: t.row.max(t.col),
                    len: n_rows.min(n_cols),
                });
            }
        }
        triples.sort_by_key(|t| (t.row, t.col));
        if let Some(w) = triples.windows(2).find(|w| w[0].row == w[1].row && w[0].col == w[1].col) {
            return Err(DataError::Duplicate { row: w[0].row, col: w[0].col });
        }

        let row_ptr = offsets(n_rows, triples.iter().map(|t| t.row));
        let col_ptr = offsets(n_cols, triples.iter().map(|t| t.col));

        // counting sort keeps row order stable within each column
        let mut next = col_ptr.clone();
        let mut col_order = vec![0; triples.len()];
        for (i, t) in triples.iter().enumerate() {
            col_order[next[t.col]] = i;
            next[t.col] += 1;
        }

        Ok(Self { n_rows, n_cols, entries: triples, row_ptr, col_ptr, col_order })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RatingTriple] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> &RatingTriple {
        &self.entries[index]
    }

    /// Λ(m): the known entries of row `m`, ascending by column.
    pub fn row(&self, m: usize) -> &[RatingTriple] {
        &self.entries[self.row_ptr[m]..self.row_ptr[m + 1]]
    }

    /// Λ(n) as entry positions, ascending by row.
    pub fn col_positions(&self, n: usize) -> &[usize] {
        &self.col_order[self.col_ptr[n]..self.col_ptr[n + 1]]
    }

    /// Λ(n): the known entries of column `n`, ascending by row.
    pub fn col(&self, n: usize) -> impl ExactSizeIterator<Item = &RatingTriple> + '_ {
        self.col_positions(n).iter().map(move |&i| &self.entries[i])
    }

    pub fn row_len(&self, m: usize) -> usize {
        self.row_ptr[m + 1] - self.row_ptr[m]
    }

    pub fn col_len(&self, n: usize) -> usize {
        self.col_ptr[n + 1] - self.col_ptr[n]
    }

    /// Same-shape matrix keeping only the entries in `set`.
    pub fn restrict(&self, set: &EntrySet) -> Result<Self, DataError> {
        let mut kept = Vec::with_capacity(set.len());
        for &i in set.indices() {
            let t = self.entries.get(i).ok_or(DataError::BadEntryIndex { index: i, len: self.len() })?;
            kept.push(*t);
        }
        Self::with_shape(self.n_rows, self.n_cols, kept)
    }

    /// Density `|Λ| / (M·N)`.
    pub fn density(&self) -> f64 {
        let cells = self.n_rows as f64 * self.n_cols as f64;
        if cells == 0.0 {
            0.0
        } else {
            self.len() as f64 / cells
        }
    }
}

fn offsets(n: usize, keys: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut ptr = vec![0usize; n + 1];
    for k in keys {
        ptr[k + 1] += 1;
    }
    for i in 0..n {
        ptr[i + 1] += ptr[i];
    }
    ptr
}

impl fmt::Display for HdiMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{} with {} known entries ({:.4}% dense)",
            self.n_rows,
            self.n_cols,
            self.len(),
            100.0 * self.density()
        )
    }
}

/// Train/validation/test partition of one matrix's known entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub rotation: usize,
    pub fold_of_entry: Vec<u8>,
    pub train: EntrySet,
    pub validation: EntrySet,
    pub test: EntrySet,
}

impl SplitAssignment {
    pub fn fold_sizes(&self) -> [usize; NUM_FOLDS] {
        let mut sizes = [0; NUM_FOLDS];
        for &f in &self.fold_of_entry {
            sizes[f as usize] += 1;
        }
        sizes
    }
}

/// Uniform integer in `0..bound` by rejection on the top of the 64-bit range.
fn bounded(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % bound;
        }
    }
}

/// Seeded Fisher–Yates permutation of `0..len`.
///
/// The stream is `ChaCha8Rng::seed_from_u64(seed)`; step `i` (from `len-1` down
/// to 1) swaps position `i` with `bounded(i+1)`, where `bounded` rejects draws
/// at or above the largest multiple of the bound and reduces the rest modulo it.
pub fn seeded_permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = bounded(&mut rng, i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Split the known entries into ten folds and pick train (folds 0..7),
/// validation (fold 7) and test (folds 8, 9).
///
/// Each rotation is an independent reshuffle seeded with `seed + rotation`.
/// Shuffled position `i` goes to fold `i % 10`, so the first `|Λ| % 10`
/// folds hold one extra entry.
pub fn split_tenfold(matrix: &HdiMatrix, seed: u64, rotation: usize) -> Result<SplitAssignment, DataError> {
    if rotation >= NUM_ROTATIONS {
        return Err(DataError::BadRotation(rotation));
    }
    let len = matrix.len();
    if len < NUM_FOLDS {
        return Err(DataError::TooFewEntries(len));
    }
    let perm = seeded_permutation(len, seed.wrapping_add(rotation as u64));
    let mut fold_of_entry = vec![0u8; len];
    for (pos, &entry) in perm.iter().enumerate() {
        fold_of_entry[entry] = (pos % NUM_FOLDS) as u8;
    }

    let (mut train, mut validation, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (entry, &fold) in fold_of_entry.iter().enumerate() {
        let fold = fold as usize;
        if fold < TRAIN_FOLDS {
            train.push(entry);
        } else if fold == VALIDATION_FOLD {
            validation.push(entry);
        } else {
            test.push(entry);
        }
    }
    Ok(SplitAssignment {
        seed,
        rotation,
        fold_of_entry,
        train: EntrySet(train),
        validation: EntrySet(validation),
        test: EntrySet(test),
    })
}

/// Audit record for a split, written by `prepare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub rotation: usize,
    pub fold_sizes: Vec<usize>,
    pub train_len: usize,
    pub validation_len: usize,
    pub test_len: usize,
}

impl From<&SplitAssignment> for SplitManifest {
    fn from(s: &SplitAssignment) -> Self {
        Self {
            seed: s.seed,
            rotation: s.rotation,
            fold_sizes: s.fold_sizes().to_vec(),
            train_len: s.train.len(),
            validation_len: s.validation.len(),
            test_len: s.test.len(),
        }
    }
}
