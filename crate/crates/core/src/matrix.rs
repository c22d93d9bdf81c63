//! Dense row-major matrices and numerically safe softmax / log-sum-exp
//! primitives shared by all other modules.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Floor applied whenever a log-space value is converted to a probability
/// that may be logged again; prevents `log(0)`.
pub const PROB_FLOOR: f64 = 1e-300;

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build from row-major data; every entry must be finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("matrix must be non-empty, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("matrix entries must be finite".to_string()));
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

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// `self (m x k) * other (k x n)`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a) in a_row.iter().enumerate() {
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self (m x k) * other^T (n x k)` without materialising the transpose.
    pub fn matmul_transpose_b(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by transpose of {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    /// Parse the shared text format: a `<rows> <cols>` header line followed
    /// by one space-separated line per row. `origin` names the source in
    /// errors (a path for files, any label for in-memory text).
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(origin, 1, "empty input, expected `<rows> <cols>` header"))?;
        let mut parts = header.split_whitespace();
        let rows: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(origin, 1, "malformed header, expected `<rows> <cols>`"))?;
        let cols: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(origin, 1, "malformed header, expected `<rows> <cols>`"))?;
        if parts.next().is_some() {
            return Err(parse_err(origin, 1, "trailing tokens in header"));
        }
        if rows == 0 || cols == 0 {
            return Err(parse_err(origin, 1, "matrix dimensions must be positive"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        let mut seen = 0usize;
        for (idx, line) in lines {
            if line.trim().is_empty() && seen == rows {
                continue;
            }
            let lineno = idx + 1;
            if seen == rows {
                return Err(parse_err(origin, lineno, "more rows than declared"));
            }
            let mut count = 0usize;
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| {
                    parse_err(origin, lineno, &format!("cannot parse real `{tok}`"))
                })?;
                if !v.is_finite() {
                    return Err(parse_err(origin, lineno, &format!("non-finite value `{tok}`")));
                }
                data.push(v);
                count += 1;
            }
            if count != cols {
                return Err(parse_err(
                    origin,
                    lineno,
                    &format!("expected {cols} values, found {count}"),
                ));
            }
            seen += 1;
        }
        if seen != rows {
            return Err(parse_err(
                origin,
                seen + 1,
                &format!("expected {rows} rows, found {seen}"),
            ));
        }
        Matrix::from_vec(rows, cols, data)
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Matrix::parse(&text, &path.display().to_string())
    }

    /// Render in the shared text format with 17 significant digits, enough
    /// for bit-exact round-trips.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.rows, self.cols);
        for r in 0..self.rows {
            let row = self.row(r);
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn parse_err(path: &str, line: usize, msg: &str) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        msg: msg.to_string(),
    }
}

/// Summation order for accumulation helpers. `Sequential` (the default) is
/// deterministic left-to-right; `Pairwise` trades that layout for lower
/// rounding error on long vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SumMode {
    #[default]
    Sequential,
    Pairwise,
}

pub fn sum_with(values: &[f64], mode: SumMode) -> f64 {
    match mode {
        SumMode::Sequential => values.iter().sum(),
        SumMode::Pairwise => pairwise_sum(values),
    }
}

fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// `log Σ exp(v_i)` computed as `m + log Σ exp(v_i - m)` with `m = max v_i`.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("logsumexp of empty vector"));
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("logsumexp requires finite entries"));
    }
    Ok(logsumexp_unchecked(values))
}

#[inline]
pub(crate) fn logsumexp_unchecked(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    for &v in values {
        acc += (v - m).exp();
    }
    m + acc.ln()
}

/// K x N matrix of per-item log class-posteriors. Columns produced by
/// [`softmax_columns`] are normalized log-distributions; outputs of
/// [`average_log_softmax`] are unnormalized log-scores consumed only by the
/// transport solver.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPosterior {
    values: Matrix,
}

impl LogPosterior {
    pub fn from_matrix(values: Matrix) -> Self {
        LogPosterior { values }
    }

    pub fn k(&self) -> usize {
        self.values.rows()
    }

    pub fn n(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Max |logsumexp(column)| over columns; ~0 for normalized posteriors.
    pub fn column_normalization_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for c in 0..self.n() {
            let col = self.values.column(c);
            worst = worst.max(logsumexp_unchecked(&col).abs());
        }
        worst
    }

    /// Per-column probabilities (softmax of each column), clamped at
    /// [`PROB_FLOOR`] so downstream code can take logs again.
    pub fn posteriors(&self) -> Matrix {
        let (k, n) = (self.k(), self.n());
        let mut out = Matrix::zeros(k, n);
        for i in 0..n {
            let col = self.values.column(i);
            let lse = logsumexp_unchecked(&col);
            for (y, &v) in col.iter().enumerate() {
                out.set(y, i, (v - lse).exp().max(PROB_FLOOR));
            }
        }
        out
    }
}

/// Column-wise log-softmax with subtract-max stabilization.
pub fn softmax_columns(logits: &Matrix) -> Result<LogPosterior> {
    let (k, n) = (logits.rows(), logits.cols());
    let mut out = Matrix::zeros(k, n);
    for i in 0..n {
        let col = logits.column(i);
        let lse = logsumexp_unchecked(&col);
        for (y, &v) in col.iter().enumerate() {
            out.set(y, i, v - lse);
        }
    }
    Ok(LogPosterior::from_matrix(out))
}

/// Entry-wise mean of the column log-softmaxes of several same-shaped logit
/// views. Deliberately not re-normalized per column: the result is the
/// expected log-probability under the view distribution, a log-score matrix
/// for the transport solver.
pub fn average_log_softmax(logit_views: &[Matrix]) -> Result<LogPosterior> {
    let first = logit_views
        .first()
        .ok_or_else(|| Error::invalid("average_log_softmax needs at least one view"))?;
    let (k, n) = (first.rows(), first.cols());
    for (idx, view) in logit_views.iter().enumerate() {
        if view.rows() != k || view.cols() != n {
            return Err(Error::shape(format!(
                "view {idx} is {}x{}, expected {k}x{n}",
                view.rows(),
                view.cols()
            )));
        }
    }
    let mut acc = Matrix::zeros(k, n);
    for view in logit_views {
        let ls = softmax_columns(view)?;
        for (o, &v) in acc.data.iter_mut().zip(ls.values.data()) {
            *o += v;
        }
    }
    let scale = 1.0 / logit_views.len() as f64;
    for o in acc.data.iter_mut() {
        *o *= scale;
    }
    Ok(LogPosterior::from_matrix(acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn logsumexp_singleton_is_identity() {
        assert_eq!(logsumexp(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn logsumexp_no_overflow_at_large_magnitude() {
        let a = 1000.0;
        let got = logsumexp(&[a, a]).unwrap();
        assert!((got - (a + std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_small_vector() {
        // high-precision reference: 3.4076059644443803045
        let got = logsumexp(&[1.0, 2.0, 3.0]).unwrap();
        assert!((got - 3.4076059644443803).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_rejects_empty_and_non_finite() {
        assert!(logsumexp(&[]).is_err());
        assert!(logsumexp(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn softmax_single_class_is_log_one() {
        let logits = Matrix::from_vec(1, 3, vec![5.0, -2.0, 7.0]).unwrap();
        let lp = softmax_columns(&logits).unwrap();
        for i in 0..3 {
            assert_eq!(lp.values().get(0, i), 0.0);
        }
    }

    #[test]
    fn softmax_symmetric_column() {
        let logits = Matrix::from_vec(2, 1, vec![0.0, 0.0]).unwrap();
        let lp = softmax_columns(&logits).unwrap();
        let half = 0.5f64.ln();
        assert!((lp.values().get(0, 0) - half).abs() < 1e-15);
        assert!((lp.values().get(1, 0) - half).abs() < 1e-15);
    }

    #[test]
    fn softmax_column_reference_values() {
        // log-softmax of [1, 2, 3], frozen from a 50-digit evaluation
        let logits = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let lp = softmax_columns(&logits).unwrap();
        let expect = [-2.4076059644443803, -1.4076059644443803, -0.4076059644443803];
        for (y, e) in expect.iter().enumerate() {
            assert!((lp.values().get(y, 0) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let logits = Matrix::from_vec(2, 1, vec![1e8, 0.0]).unwrap();
        let lp = softmax_columns(&logits).unwrap();
        assert!(lp.values().data().iter().all(|v| v.is_finite()));
        assert!((lp.values().get(0, 0)).abs() < 1e-9);
    }

    #[test]
    fn softmax_rejects_non_finite_input() {
        assert!(Matrix::from_vec(2, 1, vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn average_of_single_view_matches_softmax() {
        let logits = Matrix::from_vec(2, 2, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let avg = average_log_softmax(std::slice::from_ref(&logits)).unwrap();
        let direct = softmax_columns(&logits).unwrap();
        assert_eq!(avg.values().data(), direct.values().data());
    }

    #[test]
    fn average_of_identical_views_matches_softmax_bitwise() {
        let logits = Matrix::from_vec(2, 2, vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let avg =
            average_log_softmax(&[logits.clone(), logits.clone(), logits.clone()]).unwrap();
        let direct = softmax_columns(&logits).unwrap();
        for (a, d) in avg.values().data().iter().zip(direct.values().data()) {
            assert!((a - d).abs() < 1e-15);
        }
    }

    #[test]
    fn average_of_two_views_direct_arithmetic() {
        // columns with softmaxes [.5,.5] and [.9,.1]:
        // mean log-softmax = [(ln .5 + ln .9)/2, (ln .5 + ln .1)/2]
        let v1 = Matrix::from_vec(2, 1, vec![0.5f64.ln(), 0.5f64.ln()]).unwrap();
        let v2 = Matrix::from_vec(2, 1, vec![0.9f64.ln(), 0.1f64.ln()]).unwrap();
        let avg = average_log_softmax(&[v1, v2]).unwrap();
        assert!((avg.values().get(0, 0) - (-0.399_253_848_108_885_8)).abs() < 1e-12);
        assert!((avg.values().get(1, 0) - (-1.497_866_136_776_995_5)).abs() < 1e-12);
    }

    #[test]
    fn average_rejects_shape_mismatch() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(average_log_softmax(&[a, b]), Err(Error::Shape(_))));
    }

    #[test]
    fn matrix_text_round_trip() {
        let m = Matrix::from_vec(2, 3, vec![1.5, -2.25e-10, 0.1, 3.0, 4.0, -5.0]).unwrap();
        let r = Matrix::parse(&m.to_text(), "mem").unwrap();
        assert_eq!(m, r);
    }

    #[test]
    fn matrix_parse_reports_line() {
        let err = Matrix::parse("2 2\n1 2\n3 oops\n", "bad.mat").unwrap_err();
        match err {
            Error::Parse { path, line, .. } => {
                assert_eq!(path, "bad.mat");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn softmax_columns_sum_to_one(
            cols in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..6)
        ) {
            let k = 4;
            let n = cols.len();
            let mut data = vec![0.0; k * n];
            for (i, col) in cols.iter().enumerate() {
                for (y, &v) in col.iter().enumerate() {
                    data[y * n + i] = v;
                }
            }
            let lp = softmax_columns(&Matrix::from_vec(k, n, data).unwrap()).unwrap();
            for i in 0..n {
                let s: f64 = lp.values().column(i).iter().map(|v| v.exp()).sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn logsumexp_translation_equivariance(
            v in prop::collection::vec(-50.0f64..50.0, 1..12),
            c in -100.0f64..100.0,
        ) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let lhs = logsumexp(&shifted).unwrap();
            let rhs = logsumexp(&v).unwrap() + c;
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
        }
    }
}
