//! Stable probability primitives and simplex geometry.
//!
//! Everything here works in natural log. Matrices are dense and row-major:
//! row `k` is one example, column `i` is one class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sum - 1|` accepted by [`SimplexVector::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;
/// Sums within this distance of 1 are renormalized on construction.
pub const RENORMALIZE_TOL: f64 = 1e-6;

/// `log Σ exp(v_i)` via max subtraction.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::invalid("log_sum_exp of an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("log_sum_exp requires finite entries"));
    }
    Ok(log_sum_exp_unchecked(v))
}

#[inline]
pub(crate) fn log_sum_exp_unchecked(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Writes `softmax(z)` into `out` and returns `log Σ exp(z)`.
#[inline]
pub(crate) fn softmax_into(z: &[f64], out: &mut [f64]) -> f64 {
    debug_assert_eq!(z.len(), out.len());
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(z) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    max + total.ln()
}

/// Softmax of a finite logit vector.
pub fn softmax(z: &[f64]) -> SimplexVector {
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    SimplexVector(out)
}

/// Index of the largest entry; ties go to the lowest index.
#[inline]
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_to_simplex(v: &[f64]) -> Result<SimplexVector> {
    if v.is_empty() {
        return Err(Error::invalid("cannot project an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("projection requires finite entries"));
    }
    Ok(SimplexVector(project_unchecked(v)))
}

pub(crate) fn project_unchecked(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    /// Validates `values`; sums off by less than [`RENORMALIZE_TOL`] are
    /// rescaled to sum to one.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("simplex vector must be non-empty"));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid(format!(
                "simplex entry {i} is {} (must be finite and >= 0)",
                values[i]
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > RENORMALIZE_TOL {
            return Err(Error::invalid(format!("simplex entries sum to {sum}, not 1")));
        }
        if sum != 1.0 {
            values.iter_mut().for_each(|x| *x /= sum);
        }
        Ok(SimplexVector(values))
    }

    /// Normalizes a nonnegative vector with positive sum.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let sum: f64 = values.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(Error::invalid("cannot normalize a vector with non-positive sum"));
        }
        SimplexVector::new(values.into_iter().map(|x| x / sum).collect())
    }

    pub fn uniform(m: usize) -> Self {
        SimplexVector(vec![1.0 / m as f64; m])
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        SimplexVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl<'de> Deserialize<'de> for SimplexVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        SimplexVector::new(v).map_err(serde::de::Error::custom)
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (k, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::invalid(format!(
                    "row {k} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.data[k * self.cols + i]
    }

    /// Rows selected by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &k in indices {
            data.extend_from_slice(self.row(k));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Row-stochastic matrix of predicted class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(Matrix);

impl ProbMatrix {
    /// Validates each row; rows within [`RENORMALIZE_TOL`] of summing to one
    /// are renormalized.
    pub fn new(mut matrix: Matrix) -> Result<Self> {
        if matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(Error::invalid("probability matrix must be non-empty"));
        }
        for k in 0..matrix.rows() {
            let row = matrix.row_mut(k);
            if let Some(i) = row.iter().position(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
                return Err(Error::Validation {
                    row: k,
                    message: format!("probability {} in column {i} is outside [0, 1]", row[i]),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > RENORMALIZE_TOL {
                return Err(Error::Validation {
                    row: k,
                    message: format!("row sums to {sum}"),
                });
            }
            row.iter_mut().for_each(|x| *x /= sum);
        }
        Ok(ProbMatrix(matrix))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        ProbMatrix::new(Matrix::from_rows(rows)?)
    }

    pub(crate) fn from_matrix_unchecked(matrix: Matrix) -> Self {
        ProbMatrix(matrix)
    }

    /// Row-wise softmax of a logit matrix.
    pub fn softmax_rows(logits: &Matrix) -> Self {
        let mut out = Matrix::zeros(logits.rows(), logits.cols());
        for k in 0..logits.rows() {
            softmax_into(logits.row(k), out.row_mut(k));
        }
        ProbMatrix(out)
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        self.0.row(k)
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.0.iter_rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Column means.
    pub fn mean_row(&self) -> Vec<f64> {
        let m = self.classes();
        let mut acc = vec![0.0; m];
        for row in self.iter_rows() {
            for (a, &p) in acc.iter_mut().zip(row) {
                *a += p;
            }
        }
        let n = self.rows() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    pub fn argmax_rows(&self) -> Vec<usize> {
        self.iter_rows().map(argmax).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> ProbMatrix {
        ProbMatrix(self.0.select_rows(indices))
    }
}
