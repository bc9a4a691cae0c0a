//! Compressed sparse row storage.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// CSR matrix. Column indices are strictly increasing within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_offsets: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(row, col, value)` triples. Duplicate coordinates are
    /// merged by keeping the last value.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &triplets {
            if r >= n_rows {
                return Err(Error::IndexOutOfRange {
                    index: r,
                    bound: n_rows,
                });
            }
            if c >= n_cols {
                return Err(Error::IndexOutOfRange {
                    index: c,
                    bound: n_cols,
                });
            }
        }
        // stable sort keeps insertion order among duplicates
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("duplicate follows an entry") = v;
                continue;
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for i in 0..n_rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
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
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[s..e], &self.values[s..e])
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_offsets[r + 1] - self.row_offsets[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map_or(0.0, |k| vals[k])
    }

    /// Row sums.
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Same sparsity pattern, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols && self.iter().all(|(r, c, v)| self.get(c, r) == v)
    }

    /// Unordered pairs `(i, j)` with `i < j` carrying a stored entry.
    pub fn upper_edges(&self) -> Vec<(usize, usize)> {
        self.iter()
            .filter(|&(r, c, _)| r < c)
            .map(|(r, c, _)| (r, c))
            .collect()
    }

    /// `self · x`.
    pub fn spmm(&self, x: &Matrix) -> Result<Matrix> {
        if self.n_cols != x.rows() {
            return Err(Error::Shape(format!(
                "sparse {}x{} times dense {}x{}",
                self.n_rows,
                self.n_cols,
                x.rows(),
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(self.n_rows, x.cols());
        self.spmm_acc(x, &mut out);
        Ok(out)
    }

    /// `out += self · x`.
    pub(crate) fn spmm_acc(&self, x: &Matrix, out: &mut Matrix) {
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let orow = out.row_mut(r);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, &xv) in orow.iter_mut().zip(x.row(c)) {
                    *o += v * xv;
                }
            }
        }
    }

    /// `out += selfᵀ · g`.
    pub(crate) fn spmm_t_acc(&self, g: &Matrix, out: &mut Matrix) {
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let grow = g.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                for (o, &gv) in out.row_mut(c).iter_mut().zip(grow) {
                    *o += v * gv;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.iter() {
            m.set(r, c, v);
        }
        m
    }

    /// Debug dump: one `<row> <col> <value>` line per stored entry.
    pub fn to_triples_text(&self) -> String {
        let mut s = String::new();
        for (r, c, v) in self.iter() {
            let _ = writeln!(s, "{r} {c} {v}");
        }
        s
    }

    pub fn check_invariants(&self) -> bool {
        self.row_offsets.len() == self.n_rows + 1
            && self.row_offsets.windows(2).all(|w| w[0] <= w[1])
            && (0..self.n_rows).all(|r| {
                let (cols, _) = self.row(r);
                cols.windows(2).all(|w| w[0] < w[1]) && cols.iter().all(|&c| c < self.n_cols)
            })
    }
}
