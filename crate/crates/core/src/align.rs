//! Monotonic alignment loss over attention matrices.
//!
//! An [`AlignmentMatrix`] holds one attention distribution per output frame:
//! row `i` is an input position, column `j` an output frame, and every column
//! sums to one. The mean attended position (centroid) of frame `j` is
//! `c_j = Σ_i a_ij · i` with 1-based position weights. Monotonicity with a
//! margin asks for `c_{j+1} ≥ c_j + δ·N/M`; each violated step contributes the
//! hinge term
//!
//! ```text
//! h_j = (c_j − c_{j+1} + δ·N/M) / N,        loss = Σ_{j<M} max(h_j, 0)
//! ```
//!
//! All math is double precision. Consecutive active hinges are summed in
//! telescoped form (`(c_p − c_{q+1} + k·δ·N/M) / N` for a run `p..=q` of `k`
//! active terms), which is algebraically identical to the term-by-term sum but
//! leaves interior centroids out of the arithmetic entirely.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::numfmt::fmt_f64;

/// Margin amplification used for every experiment unless overridden.
pub const DEFAULT_DELTA: f64 = 0.01;
/// Regularization weight that mixes the alignment term into the objective.
pub const DEFAULT_LAMBDA: f64 = 1e-5;
/// Absolute tolerance on each column sum of an alignment matrix.
pub const COLUMN_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("alignment matrix needs at least one input and one frame, got {n_inputs}x{n_frames}")]
    EmptyShape { n_inputs: usize, n_frames: usize },
    #[error("a {n_inputs}x{n_frames} alignment matrix needs {expected} values, got {got}")]
    LengthMismatch {
        n_inputs: usize,
        n_frames: usize,
        expected: usize,
        got: usize,
    },
    #[error("entry at input {input}, frame {frame} is {value}; entries must be finite and nonnegative")]
    InvalidEntry { input: usize, frame: usize, value: f64 },
    #[error("column-sum tolerance violated: frame {frame} sums to {sum}, allowed deviation from 1 is {tolerance}")]
    ColumnSum { frame: usize, sum: f64, tolerance: f64 },
    #[error("delta must be finite and nonnegative, got {0}")]
    InvalidDelta(f64),
    #[error("lambda must be finite and nonnegative, got {0}")]
    InvalidLambda(f64),
    #[error("malformed alignment csv, line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Column-stochastic `N×M` attention weights, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix {
    values: Vec<f64>,
    n_inputs: usize,
    n_frames: usize,
}

impl AlignmentMatrix {
    /// Validates and wraps row-major `values` (row = input position).
    pub fn new(n_inputs: usize, n_frames: usize, values: Vec<f64>) -> Result<Self, AlignError> {
        if n_inputs == 0 || n_frames == 0 {
            return Err(AlignError::EmptyShape { n_inputs, n_frames });
        }
        let expected = n_inputs * n_frames;
        if values.len() != expected {
            return Err(AlignError::LengthMismatch {
                n_inputs,
                n_frames,
                expected,
                got: values.len(),
            });
        }
        for (k, &value) in values.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(AlignError::InvalidEntry {
                    input: k / n_frames + 1,
                    frame: k % n_frames + 1,
                    value,
                });
            }
        }
        for j in 0..n_frames {
            let sum: f64 = (0..n_inputs).map(|i| values[i * n_frames + j]).sum();
            if (sum - 1.0).abs() > COLUMN_SUM_TOLERANCE {
                return Err(AlignError::ColumnSum {
                    frame: j + 1,
                    sum,
                    tolerance: COLUMN_SUM_TOLERANCE,
                });
            }
        }
        Ok(Self {
            values,
            n_inputs,
            n_frames,
        })
    }

    /// Builds a matrix from per-frame attention columns.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self, AlignError> {
        let n_frames = columns.len();
        let n_inputs = columns.first().map_or(0, Vec::len);
        let mut values = vec![0.0; n_inputs * n_frames];
        for (j, column) in columns.iter().enumerate() {
            if column.len() != n_inputs {
                return Err(AlignError::LengthMismatch {
                    n_inputs,
                    n_frames,
                    expected: n_inputs,
                    got: column.len(),
                });
            }
            for (i, &a) in column.iter().enumerate() {
                values[i * n_frames + j] = a;
            }
        }
        Self::new(n_inputs, n_frames, values)
    }

    /// Hard alignment: frame `j` attends entirely to 0-based row `rows[j]`.
    pub fn one_hot(n_inputs: usize, rows: &[usize]) -> Result<Self, AlignError> {
        let n_frames = rows.len();
        let mut values = vec![0.0; n_inputs * n_frames];
        for (j, &row) in rows.iter().enumerate() {
            if row >= n_inputs {
                return Err(AlignError::InvalidEntry {
                    input: row + 1,
                    frame: j + 1,
                    value: 1.0,
                });
            }
            values[row * n_frames + j] = 1.0;
        }
        Self::new(n_inputs, n_frames, values)
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Entry at 0-based `(input, frame)`.
    pub fn get(&self, input: usize, frame: usize) -> f64 {
        self.values[input * self.n_frames + frame]
    }

    pub fn column(&self, frame: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_inputs).map(move |i| self.get(i, frame))
    }

    /// `N,M` header followed by `N` rows of `M` values.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.n_inputs, self.n_frames);
        for row in self.values.chunks(self.n_frames) {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}", fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, AlignError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let csv_err = |line: usize, reason: String| AlignError::Csv { line, reason };

        let (hline, header) = lines
            .next()
            .ok_or_else(|| csv_err(1, "missing `N,M` header".into()))?;
        let dims: Vec<&str> = header.split(',').map(str::trim).collect();
        if dims.len() != 2 {
            return Err(csv_err(hline + 1, format!("header must be `N,M`, got `{header}`")));
        }
        let parse_dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| csv_err(hline + 1, format!("bad dimension `{s}`: {e}")))
        };
        let n_inputs = parse_dim(dims[0])?;
        let n_frames = parse_dim(dims[1])?;

        let mut values = Vec::with_capacity(n_inputs * n_frames);
        let mut rows = 0;
        for (lineno, line) in lines {
            rows += 1;
            if rows > n_inputs {
                return Err(csv_err(lineno + 1, format!("more than {n_inputs} rows")));
            }
            let before = values.len();
            for field in line.split(',') {
                let field = field.trim();
                let v = field
                    .parse::<f64>()
                    .map_err(|e| csv_err(lineno + 1, format!("bad value `{field}`: {e}")))?;
                values.push(v);
            }
            let got = values.len() - before;
            if got != n_frames {
                return Err(csv_err(
                    lineno + 1,
                    format!("expected {n_frames} values, got {got}"),
                ));
            }
        }
        if rows != n_inputs {
            return Err(csv_err(
                rows + 1,
                format!("expected {n_inputs} rows, got {rows}"),
            ));
        }
        Self::new(n_inputs, n_frames, values)
    }

    pub fn read_csv(path: &Path) -> Result<Self, AlignError> {
        let text = std::fs::read_to_string(path).map_err(|e| AlignError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_csv(&text)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), AlignError> {
        std::fs::write(path, self.to_csv()).map_err(|e| AlignError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Mean attended position per frame, in 1-based input positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSeries {
    centroids: Vec<f64>,
}

impl CentroidSeries {
    pub fn as_slice(&self) -> &[f64] {
        &self.centroids
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// `(min, max)` over all frames.
    pub fn range(&self) -> (f64, f64) {
        self.centroids
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| {
                (lo.min(c), hi.max(c))
            })
    }
}

/// Regularizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct AlignConfig {
    pub delta: f64,
    pub lambda: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl AlignConfig {
    pub fn new(delta: f64, lambda: f64) -> Result<Self, AlignError> {
        let config = Self { delta, lambda };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), AlignError> {
        check_delta(self.delta)?;
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(AlignError::InvalidLambda(self.lambda));
        }
        Ok(())
    }
}

/// Diagnostics derived from the hinge terms of one matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub loss: f64,
    pub violation_count: usize,
    pub violation_rate: f64,
    pub max_violation: f64,
    pub centroid_range: (f64, f64),
}

fn check_delta(delta: f64) -> Result<(), AlignError> {
    if !delta.is_finite() || delta < 0.0 {
        return Err(AlignError::InvalidDelta(delta));
    }
    Ok(())
}

/// `c_j = Σ_i a_ij · i` with 1-based `i`.
pub fn centroids(a: &AlignmentMatrix) -> CentroidSeries {
    CentroidSeries {
        centroids: raw_centroids(a.n_frames, &a.values),
    }
}

fn raw_centroids(m: usize, values: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m];
    for (i, row) in values.chunks(m).enumerate() {
        let weight = (i + 1) as f64;
        for (cj, &v) in c.iter_mut().zip(row) {
            *cj += v * weight;
        }
    }
    c
}

fn check_raw(n_inputs: usize, n_frames: usize, values: &[f64]) -> Result<(), AlignError> {
    if n_inputs == 0 || n_frames == 0 {
        return Err(AlignError::EmptyShape { n_inputs, n_frames });
    }
    if values.len() != n_inputs * n_frames {
        return Err(AlignError::LengthMismatch {
            n_inputs,
            n_frames,
            expected: n_inputs * n_frames,
            got: values.len(),
        });
    }
    Ok(())
}

/// Hinge arguments `h_j` for `j = 1..M−1` (length `M − 1`).
pub fn hinge_arguments(a: &AlignmentMatrix, delta: f64) -> Result<Vec<f64>, AlignError> {
    check_delta(delta)?;
    let c = centroids(a);
    Ok(hinges_from_centroids(c.as_slice(), a.n_inputs, delta))
}

fn margin(n: usize, m: usize, delta: f64) -> f64 {
    delta * n as f64 / m as f64
}

fn hinges_from_centroids(c: &[f64], n: usize, delta: f64) -> Vec<f64> {
    let margin = margin(n, c.len(), delta);
    let n = n as f64;
    c.windows(2).map(|w| (w[0] - w[1] + margin) / n).collect()
}

fn loss_from_hinges(c: &[f64], h: &[f64], n: usize, delta: f64) -> f64 {
    let margin = margin(n, c.len(), delta);
    let n = n as f64;
    let mut loss = 0.0;
    let mut j = 0;
    while j < h.len() {
        if h[j] <= 0.0 {
            j += 1;
            continue;
        }
        let start = j;
        let mut largest = h[j];
        while j < h.len() && h[j] > 0.0 {
            largest = largest.max(h[j]);
            j += 1;
        }
        let k = (j - start) as f64;
        let run = (c[start] - c[j] + k * margin) / n;
        // rounding guard: a run's sum is never below its largest term
        loss += run.max(largest);
    }
    loss
}

/// Monotonic alignment loss. Zero when the matrix has a single frame.
pub fn alignment_loss(a: &AlignmentMatrix, delta: f64) -> Result<f64, AlignError> {
    alignment_loss_raw(a.n_inputs, a.n_frames, &a.values, delta)
}

/// [`alignment_loss`] on raw row-major weights. Only the shape is checked, so
/// this also evaluates the loss off the probability simplex (finite
/// differences, autodiff).
pub fn alignment_loss_raw(
    n_inputs: usize,
    n_frames: usize,
    values: &[f64],
    delta: f64,
) -> Result<f64, AlignError> {
    check_delta(delta)?;
    check_raw(n_inputs, n_frames, values)?;
    let c = raw_centroids(n_frames, values);
    let h = hinges_from_centroids(&c, n_inputs, delta);
    Ok(loss_from_hinges(&c, &h, n_inputs, delta))
}

/// Mean of per-example losses, each evaluated with its own `N` and `M`.
pub fn batch_alignment_loss(batch: &[AlignmentMatrix], delta: f64) -> Result<f64, AlignError> {
    check_delta(delta)?;
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for a in batch {
        total += alignment_loss(a, delta)?;
    }
    Ok(total / batch.len() as f64)
}

/// Subgradient of [`alignment_loss`] with respect to every entry, row-major
/// `N×M`. The subgradient at an exact kink (`h_j = 0`) is taken as zero.
pub fn alignment_loss_grad(a: &AlignmentMatrix, delta: f64) -> Result<Vec<f64>, AlignError> {
    alignment_loss_grad_raw(a.n_inputs, a.n_frames, &a.values, delta)
}

/// [`alignment_loss_grad`] on raw row-major weights.
pub fn alignment_loss_grad_raw(
    n: usize,
    m: usize,
    values: &[f64],
    delta: f64,
) -> Result<Vec<f64>, AlignError> {
    check_delta(delta)?;
    check_raw(n, m, values)?;
    let c = raw_centroids(m, values);
    let h = hinges_from_centroids(&c, n, delta);
    // per-frame sign: +1 if the hinge leaving frame j is active, −1 if the
    // hinge entering it is active
    let sign: Vec<f64> = (0..m)
        .map(|j| {
            let out = if j + 1 < m && h[j] > 0.0 { 1.0 } else { 0.0 };
            let inc = if j > 0 && h[j - 1] > 0.0 { 1.0 } else { 0.0 };
            out - inc
        })
        .collect();
    let inv_n = 1.0 / n as f64;
    let mut grad = vec![0.0; n * m];
    for i in 0..n {
        let w = (i + 1) as f64 * inv_n;
        for j in 0..m {
            grad[i * m + j] = sign[j] * w;
        }
    }
    Ok(grad)
}

pub fn monotonicity_report(
    a: &AlignmentMatrix,
    delta: f64,
) -> Result<MonotonicityReport, AlignError> {
    check_delta(delta)?;
    let c = centroids(a);
    let h = hinges_from_centroids(c.as_slice(), a.n_inputs, delta);
    let loss = loss_from_hinges(c.as_slice(), &h, a.n_inputs, delta);
    let violation_count = h.iter().filter(|&&x| x > 0.0).count();
    let violation_rate = if h.is_empty() {
        0.0
    } else {
        violation_count as f64 / h.len() as f64
    };
    let max_violation = h.iter().copied().filter(|&x| x > 0.0).fold(0.0, f64::max);
    Ok(MonotonicityReport {
        loss,
        violation_count,
        violation_rate,
        max_violation,
        centroid_range: c.range(),
    })
}
