//! Dense aliases and a small CSR matrix used for graph propagation.

use ndarray::{Array2, ArrayView2};

use crate::error::{shape_err, Result};

pub type Matrix = Array2<f64>;

/// Compressed sparse row matrix with `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed and
    /// column indices within a row end up sorted.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(shape_err!("entry ({r}, {c}) outside {rows}x{cols}"));
            }
        }
        entries.sort_by_key(|a| (a.0, a.1));

        let mut indptr = vec![0usize; rows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn from_dense(dense: ArrayView2<'_, f64>) -> Self {
        let (rows, cols) = dense.dim();
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in dense.rows() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Stored `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(pos) => self.values[span.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros((self.rows, self.cols));
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out[[r, c]] = v;
            }
        }
        out
    }

    /// Every stored `(i, j)` has a stored `(j, i)` with the same value.
    pub fn is_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        (0..self.rows).all(|r| {
            self.row(r).all(|(c, v)| {
                let span = self.indptr[c]..self.indptr[c + 1];
                match self.indices[span.clone()].binary_search(&r) {
                    Ok(pos) => self.values[span.start + pos] == v,
                    Err(_) => false,
                }
            })
        })
    }

    /// `self * dense`.
    pub fn mul_dense(&self, dense: &Matrix) -> Result<Matrix> {
        if dense.nrows() != self.cols {
            return Err(shape_err!(
                "sparse {}x{} times dense {}x{}",
                self.rows,
                self.cols,
                dense.nrows(),
                dense.ncols()
            ));
        }
        let width = dense.ncols();
        let src = dense.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.rows * width];
        for (r, out_row) in out.chunks_mut(width.max(1)).enumerate().take(self.rows) {
            for (c, v) in self.row(r) {
                let in_row = &src[c * width..(c + 1) * width];
                for (o, x) in out_row.iter_mut().zip(in_row) {
                    *o += v * x;
                }
            }
        }
        Ok(Matrix::from_shape_vec((self.rows, width), out).expect("sized above"))
    }

    /// `self^T * dense`.
    pub fn transpose_mul_dense(&self, dense: &Matrix) -> Result<Matrix> {
        if dense.nrows() != self.rows {
            return Err(shape_err!(
                "sparse^T {}x{} times dense {}x{}",
                self.cols,
                self.rows,
                dense.nrows(),
                dense.ncols()
            ));
        }
        let width = dense.ncols();
        let src = dense.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let mut out = vec![0.0; self.cols * width];
        for r in 0..self.rows {
            let in_row = &src[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let out_row = &mut out[c * width..(c + 1) * width];
                for (o, x) in out_row.iter_mut().zip(in_row) {
                    *o += v * x;
                }
            }
        }
        Ok(Matrix::from_shape_vec((self.cols, width), out).expect("sized above"))
    }

    /// Submatrix keeping the given rows and columns, in the given order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_pos = vec![usize::MAX; self.cols];
        for (i, &c) in cols.iter().enumerate() {
            col_pos[c] = i;
        }
        let mut triplets = Vec::new();
        for (i, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                if col_pos[c] != usize::MAX {
                    triplets.push((i, col_pos[c], v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), triplets).expect("indices in range")
    }
}

/// Node features, kept sparse when most entries are zero (bag-of-words data).
#[derive(Debug, Clone)]
pub enum FeatureMatrix {
    Dense(Matrix),
    Sparse(CsrMatrix),
}

impl FeatureMatrix {
    /// Chooses a sparse representation when at most `max_density` of entries are nonzero.
    pub fn auto(dense: &Matrix, max_density: f64) -> Self {
        let nnz = dense.iter().filter(|v| **v != 0.0).count();
        let total = dense.len().max(1);
        if (nnz as f64) / (total as f64) <= max_density {
            FeatureMatrix::Sparse(CsrMatrix::from_dense(dense.view()))
        } else {
            FeatureMatrix::Dense(dense.clone())
        }
    }

    pub fn nrows(&self) -> usize {
        match self {
            FeatureMatrix::Dense(m) => m.nrows(),
            FeatureMatrix::Sparse(m) => m.rows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            FeatureMatrix::Dense(m) => m.ncols(),
            FeatureMatrix::Sparse(m) => m.cols(),
        }
    }

    pub fn mul(&self, rhs: &Matrix) -> Result<Matrix> {
        match self {
            FeatureMatrix::Dense(m) => checked_dot(m, rhs),
            FeatureMatrix::Sparse(m) => m.mul_dense(rhs),
        }
    }

    pub fn transpose_mul(&self, rhs: &Matrix) -> Result<Matrix> {
        match self {
            FeatureMatrix::Dense(m) => checked_dot(&m.t().to_owned(), rhs),
            FeatureMatrix::Sparse(m) => m.transpose_mul_dense(rhs),
        }
    }
}

pub fn checked_dot(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.nrows() {
        return Err(shape_err!(
            "matmul {}x{} by {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        ));
    }
    Ok(a.dot(b))
}

/// `rows.len() x n` matrix whose i-th row is the unit vector `e_{rows[i]}`.
pub fn selection_matrix(rows: &[usize], n: usize) -> Matrix {
    let mut s = Matrix::zeros((rows.len(), n));
    for (i, &r) in rows.iter().enumerate() {
        s[[i, r]] = 1.0;
    }
    s
}

pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut y = Matrix::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        y[[i, l]] = 1.0;
    }
    y
}

pub fn gather_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    m.select(ndarray::Axis(0), rows)
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Population standard deviation over all entries.
pub fn entry_std(m: &Matrix) -> f64 {
    let n = m.len();
    if n == 0 {
        return 0.0;
    }
    let mean = m.sum() / n as f64;
    (m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt()
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = CsrMatrix::from_triplets(2, 3, [(1, 2, 1.0), (0, 1, 2.0), (1, 0, 3.0), (0, 1, 0.5)])
            .unwrap();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.to_dense(), array![[0.0, 2.5, 0.0], [3.0, 0.0, 1.0]]);
        assert!(CsrMatrix::from_triplets(2, 2, [(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn sparse_products_match_dense() {
        let dense = array![[0.0, 1.0, 2.0], [3.0, 0.0, 0.0], [0.0, 0.0, 4.0]];
        let sparse = CsrMatrix::from_dense(dense.view());
        let x = array![[1.0, -1.0], [0.5, 2.0], [2.0, 0.0]];
        assert_eq!(sparse.mul_dense(&x).unwrap(), dense.dot(&x));
        assert_eq!(sparse.transpose_mul_dense(&x).unwrap(), dense.t().dot(&x));
        assert!(sparse.mul_dense(&array![[1.0]]).is_err());
    }

    #[test]
    fn select_and_symmetry() {
        let m = CsrMatrix::from_triplets(3, 3, [(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0)])
            .unwrap();
        assert!(m.is_symmetric());
        let sub = m.select(&[0, 1], &[0, 1]);
        assert_eq!(sub.to_dense(), array![[0.0, 1.0], [1.0, 0.0]]);
        let asym = CsrMatrix::from_triplets(2, 2, [(0, 1, 1.0)]).unwrap();
        assert!(!asym.is_symmetric());
    }

    #[test]
    fn feature_matrix_paths_agree() {
        let dense = array![[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 2.0]];
        let w = array![[1.0], [2.0], [3.0], [4.0]];
        let g = array![[1.0, 0.0], [0.0, 1.0]];
        let sparse = FeatureMatrix::auto(&dense, 0.5);
        assert!(matches!(sparse, FeatureMatrix::Sparse(_)));
        let full = FeatureMatrix::Dense(dense.clone());
        assert_eq!(sparse.mul(&w).unwrap(), full.mul(&w).unwrap());
        assert_eq!(
            sparse.transpose_mul(&g).unwrap(),
            full.transpose_mul(&g).unwrap()
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&array![[1000.0, 1000.0], [0.0, f64::ln(3.0)]]);
        assert!((p[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((p[[1, 1]] - 0.75).abs() < 1e-12);
    }
}
