//! Small vector and sparse-matrix helpers shared by the assembly and solver
//! code. Vectors are plain `[f64]` slices throughout.

use nalgebra::{DMatrix, DVectorViewMut};

/// Compressed sparse row matrix with sorted, duplicate-free column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// One row of a [`CsrMatrix`].
#[derive(Debug, Clone, Copy)]
pub struct CsrRow<'a> {
    cols: &'a [usize],
    vals: &'a [f64],
}

impl<'a> CsrRow<'a> {
    pub fn col_indices(&self) -> &'a [usize] {
        self.cols
    }

    pub fn values(&self) -> &'a [f64] {
        self.vals
    }
}

impl CsrMatrix {
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> CsrRow<'_> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        CsrRow {
            cols: &self.col_idx[r.clone()],
            vals: &self.values[r],
        }
    }

    pub fn row_iter(&self) -> impl Iterator<Item = CsrRow<'_>> + '_ {
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut trip = Vec::with_capacity(self.nnz());
        for (i, row) in self.row_iter().enumerate() {
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                trip.push((j, i, v));
            }
        }
        csr_from_triplets(self.ncols, self.nrows, &trip)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = M x`
pub fn spmv(m: &CsrMatrix, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.nrows()];
    spmv_add(m, x, &mut y);
    y
}

/// `y += M x`
pub fn spmv_add(m: &CsrMatrix, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), m.ncols());
    for (i, row) in m.row_iter().enumerate() {
        let mut s = 0.0;
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            s += v * x[j];
        }
        y[i] += s;
    }
}

/// `y = M^T x`
pub fn spmv_t(m: &CsrMatrix, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.ncols()];
    spmv_t_add(m, x, &mut y);
    y
}

/// `y += M^T x`
pub fn spmv_t_add(m: &CsrMatrix, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), m.nrows());
    for (i, row) in m.row_iter().enumerate() {
        let xi = x[i];
        if xi == 0.0 {
            continue;
        }
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            y[j] += v * xi;
        }
    }
}

/// Builds a CSR matrix from triplets, summing duplicates.
///
/// Duplicates are summed in input order, so the result is deterministic.
pub fn csr_from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix {
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));
    let mut row_ptr = vec![0usize; nrows + 1];
    let mut col_idx = Vec::with_capacity(triplets.len());
    let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
    let mut last: Option<(usize, usize)> = None;
    for k in order {
        let (i, j, v) = triplets[k];
        assert!(i < nrows && j < ncols, "triplet ({i}, {j}) out of bounds");
        if last == Some((i, j)) {
            *values.last_mut().expect("nonempty") += v;
        } else {
            col_idx.push(j);
            values.push(v);
            row_ptr[i + 1] += 1;
            last = Some((i, j));
        }
    }
    for i in 0..nrows {
        row_ptr[i + 1] += row_ptr[i];
    }
    CsrMatrix {
        nrows,
        ncols,
        row_ptr,
        col_idx,
        values,
    }
}

pub fn csr_to_dense(m: &CsrMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, row) in m.row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            d[(i, j)] += v;
        }
    }
    d
}

pub(crate) fn view_mut(x: &mut [f64]) -> DVectorViewMut<'_, f64> {
    let n = x.len();
    DVectorViewMut::from_slice(x, n)
}

/// Solves `L x = b` in place for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &mut [f64]) {
    let ok = l.solve_lower_triangular_mut(&mut view_mut(b));
    debug_assert!(ok);
}

/// Solves `L^T x = b` in place for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &mut [f64]) {
    let ok = l.tr_solve_lower_triangular_mut(&mut view_mut(b));
    debug_assert!(ok);
}

/// `y = M x` for a dense matrix.
pub fn gemv(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.nrows()];
    for (j, col) in m.column_iter().enumerate() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for (yi, mij) in y.iter_mut().zip(col.iter()) {
            *yi += mij * xj;
        }
    }
    y
}

/// `y = M^T x` for a dense matrix.
pub fn gemv_t(m: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    m.column_iter().map(|col| dot(col.as_slice(), x)).collect()
}
