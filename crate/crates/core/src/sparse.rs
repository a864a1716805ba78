//! Dense and compressed-row sparse matrices.
//!
//! Graph signals, hidden states and parameters are [`DenseMatrix`] values in
//! row-major order. Transition matrices and Laplacians are [`SparseMatrix`]
//! values in compressed sparse row form. Diffusion over the graph is a chain
//! of sparse-dense products, see [`diffusion_powers`].

use std::cell::Cell;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

thread_local! {
    static SPMM_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of sparse-dense products performed on the current thread.
pub fn spmm_call_count() -> usize {
    SPMM_CALLS.with(|c| c.get())
}

pub fn reset_spmm_call_count() {
    SPMM_CALLS.with(|c| c.set(0));
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals in tests and small fixtures.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), n_cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: n_rows,
            cols: n_cols,
            data,
        }
    }

    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
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

    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|x| x * s)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            (&self.data, self.cols as isize, 1),
            (&other.data, other.cols as isize, 1),
            &mut out.data,
        );
        Ok(out)
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul_tn",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            (&self.data, 1, self.cols as isize),
            (&other.data, other.cols as isize, 1),
            &mut out.data,
        );
        Ok(out)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                op: "matmul_nt",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            (&self.data, self.cols as isize, 1),
            (&other.data, 1, other.cols as isize),
            &mut out.data,
        );
        Ok(out)
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn hcat(parts: &[&DenseMatrix]) -> Result<Self> {
        let rows = parts.first().map_or(0, |p| p.rows);
        let mut cols = 0;
        for p in parts {
            if p.rows != rows {
                return Err(Error::DimensionMismatch {
                    op: "hcat",
                    left: (rows, cols),
                    right: p.shape(),
                });
            }
            cols += p.cols;
        }
        let mut out = Self::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            let dst = out.row_mut(r);
            for p in parts {
                dst[offset..offset + p.cols].copy_from_slice(p.row(r));
                offset += p.cols;
            }
        }
        Ok(out)
    }

    /// Stacks matrices with equal column counts along the row axis.
    pub fn vcat(parts: &[&DenseMatrix]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::DimensionMismatch {
                    op: "vcat",
                    left: (rows, cols),
                    right: p.shape(),
                });
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Self { rows, cols, data })
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.cols {
            return Err(Error::DimensionMismatch {
                op: "slice_cols",
                left: self.shape(),
                right: (start, len),
            });
        }
        let mut out = Self::zeros(self.rows, len);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..start + len]);
        }
        Ok(out)
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.rows {
            return Err(Error::DimensionMismatch {
                op: "slice_rows",
                left: self.shape(),
                right: (start, len),
            });
        }
        Ok(Self {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        })
    }

    pub(crate) fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

fn gemm(m: usize, k: usize, n: usize, a: (&[f64], isize, isize), b: (&[f64], isize, isize), c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    // SAFETY: the strides describe in-bounds views of `a` (m×k), `b` (k×n)
    // and the row-major `c` (m×n), all checked by the callers' shape tests.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Compressed sparse row matrix with sorted, unique column indices and no
/// stored zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// entries that end up exactly zero are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut trip: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, v) in &trip {
            if r >= n_rows || c >= n_cols {
                return Err(Error::DimensionMismatch {
                    op: "from_triplets",
                    left: (n_rows, n_cols),
                    right: (r, c),
                });
            }
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("non-finite value at ({r}, {c})")));
            }
        }
        trip.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(trip.len());
        let mut values = Vec::with_capacity(trip.len());
        let mut i = 0;
        while i < trip.len() {
            let (r, c, mut v) = trip[i];
            i += 1;
            while i < trip.len() && trip[i].0 == r && trip[i].1 == c {
                v += trip[i].2;
                i += 1;
            }
            if v != 0.0 {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
            }
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let trip = (0..m.n_rows())
            .flat_map(|r| (0..m.n_cols()).map(move |c| (r, c)))
            .map(|(r, c)| (r, c, m.get(r, c)))
            .filter(|t| t.2 != 0.0);
        Self::from_triplets(m.n_rows(), m.n_cols(), trip).expect("dense entries are in range")
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.row_offsets[self.n_rows]
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        (&self.col_indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.triplets() {
            m.set(r, c, v);
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let row_offsets = counts.clone();
        let mut next = counts;
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        // rows are visited in increasing order, so each output row stays sorted
        for (r, c, v) in self.triplets() {
            let slot = next[c];
            col_indices[slot] = r;
            values[slot] = v;
            next[c] += 1;
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        if s == 0.0 {
            return Self::zeros(self.n_rows, self.n_cols);
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Scales row `r` by `left[r]` and column `c` by `right[c]`.
    pub fn scale_rows_cols(&self, left: &[f64], right: &[f64]) -> Self {
        let trip = self.triplets().map(|(r, c, v)| (r, c, left[r] * v * right[c]));
        Self::from_triplets(self.n_rows, self.n_cols, trip).expect("same sparsity pattern")
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op: "sparse add",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Self::from_triplets(self.n_rows, self.n_cols, self.triplets().chain(other.triplets()))
    }

    /// First asymmetric position found with tolerance `tol`, if any.
    pub fn asymmetry(&self, tol: f64) -> Option<(usize, usize)> {
        if self.n_rows != self.n_cols {
            return Some((self.n_rows, self.n_cols));
        }
        self.triplets()
            .find(|&(r, c, v)| (v - self.get(c, r)).abs() > tol)
            .map(|(r, c, _)| (r, c))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.asymmetry(tol).is_none()
    }
}

/// Sparse-dense product `a · x`.
pub fn spmm(a: &SparseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if a.n_cols != x.n_rows() {
        return Err(Error::DimensionMismatch {
            op: "spmm",
            left: a.shape(),
            right: x.shape(),
        });
    }
    let mut out = DenseMatrix::zeros(a.n_rows, x.n_cols());
    spmm_into(a, x.as_slice(), x.n_cols(), out.as_mut_slice());
    SPMM_CALLS.with(|c| c.set(c.get() + 1));
    Ok(out)
}

/// Applies `a` independently to each consecutive block of `a.n_cols()` rows
/// of `x`. A minibatch of graph signals is stored as such a stack of blocks,
/// so this is the block-diagonal product `(I_B ⊗ a) · x`.
pub fn spmm_blocks(a: &SparseMatrix, x: &DenseMatrix) -> Result<DenseMatrix> {
    if a.n_rows != a.n_cols || a.n_cols == 0 || !x.n_rows().is_multiple_of(a.n_cols) {
        return Err(Error::DimensionMismatch {
            op: "spmm_blocks",
            left: a.shape(),
            right: x.shape(),
        });
    }
    let n = a.n_rows;
    let cols = x.n_cols();
    let mut out = DenseMatrix::zeros(x.n_rows(), cols);
    for (src, dst) in x
        .as_slice()
        .chunks(n * cols)
        .zip(out.as_mut_slice().chunks_mut(n * cols))
    {
        spmm_into(a, src, cols, dst);
    }
    SPMM_CALLS.with(|c| c.set(c.get() + 1));
    Ok(out)
}

fn spmm_into(a: &SparseMatrix, x: &[f64], cols: usize, out: &mut [f64]) {
    for r in 0..a.n_rows {
        let dst = &mut out[r * cols..(r + 1) * cols];
        let (idx, vals) = a.row(r);
        for (&c, &v) in idx.iter().zip(vals) {
            let src = &x[c * cols..(c + 1) * cols];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
    }
}

/// Returns `[x, p·x, p²·x, …]` with `k_max` entries, computed by repeated
/// sparse-dense products. Exactly `k_max - 1` products are performed.
pub fn diffusion_powers(p: &SparseMatrix, x: &DenseMatrix, k_max: usize) -> Result<Vec<DenseMatrix>> {
    if k_max == 0 {
        return Err(Error::InvalidParameter("k_max must be at least 1".into()));
    }
    if p.n_rows != p.n_cols || p.n_cols != x.n_rows() {
        return Err(Error::DimensionMismatch {
            op: "diffusion_powers",
            left: p.shape(),
            right: x.shape(),
        });
    }
    let mut out = Vec::with_capacity(k_max);
    out.push(x.clone());
    for k in 1..k_max {
        let next = spmm(p, &out[k - 1])?;
        out.push(next);
    }
    Ok(out)
}

/// Solves `a · x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.n_rows();
    if a.n_cols() != n || b.n_rows() != n {
        return Err(Error::DimensionMismatch {
            op: "solve_dense",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let m = b.n_cols();
    let mut a = a.clone();
    let mut x = b.clone();
    let scale = a.max_abs().max(1.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a.get(i, col).abs().total_cmp(&a.get(j, col).abs()))
            .expect("non-empty range");
        if a.get(pivot, col).abs() <= 1e-14 * scale {
            return Err(Error::Singular("solve_dense"));
        }
        if pivot != col {
            for c in 0..n {
                let t = a.get(col, c);
                a.set(col, c, a.get(pivot, c));
                a.set(pivot, c, t);
            }
            for c in 0..m {
                let t = x.get(col, c);
                x.set(col, c, x.get(pivot, c));
                x.set(pivot, c, t);
            }
        }
        let d = a.get(col, col);
        for r in col + 1..n {
            let f = a.get(r, col) / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a.set(r, c, a.get(r, c) - f * a.get(col, c));
            }
            for c in 0..m {
                x.set(r, c, x.get(r, c) - f * x.get(col, c));
            }
        }
    }
    for col in (0..n).rev() {
        let d = a.get(col, col);
        for c in 0..m {
            let mut v = x.get(col, c);
            for k in col + 1..n {
                v -= a.get(col, k) * x.get(k, c);
            }
            x.set(col, c, v / d);
        }
    }
    Ok(x)
}

/// Writes `row,col,value` lines with a header. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_triplets<W: Write>(m: &SparseMatrix, mut out: W) -> Result<()> {
    writeln!(out, "row,col,value")?;
    for (r, c, v) in m.triplets() {
        writeln!(out, "{r},{c},{v}")?;
    }
    Ok(())
}

/// Reads the format produced by [`write_triplets`].
pub fn read_triplets<R: BufRead>(input: R, n_rows: usize, n_cols: usize, path: &str) -> Result<SparseMatrix> {
    let mut trip = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if i == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, i + 1, "expected `row,col,value`"));
        }
        let r: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad row `{}`", fields[0])))?;
        let c: usize = fields[1]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad col `{}`", fields[1])))?;
        let v: f64 = fields[2]
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad value `{}`", fields[2])))?;
        if r >= n_rows || c >= n_cols {
            return Err(Error::parse(
                path,
                i + 1,
                format!("index ({r}, {c}) out of range"),
            ));
        }
        trip.push((r, c, v));
    }
    SparseMatrix::from_triplets(n_rows, n_cols, trip)
}
