use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Assembles a CSR matrix from its raw parts. Column indices must be
    /// sorted within each row.
    pub fn from_csr(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != rows + 1 || indices.len() != values.len() || indptr.last().copied() != Some(indices.len()) {
            return Err(Error::shape("sparse", "inconsistent CSR arrays"));
        }
        if indices.iter().any(|&c| c >= cols) {
            return Err(Error::shape("sparse", "column index out of range"));
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates the stored `(col, value)` entries of row `r`.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
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

    /// Returns `self + shift·I`, inserting diagonal entries where absent.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::with_capacity(self.nnz() + self.rows);
        let mut values = Vec::with_capacity(self.nnz() + self.rows);
        indptr.push(0);
        for r in 0..self.rows {
            let mut placed = r >= self.cols;
            for (c, v) in self.row_entries(r) {
                if !placed && c >= r {
                    if c == r {
                        indices.push(c);
                        values.push(v + shift);
                        placed = true;
                        continue;
                    }
                    indices.push(r);
                    values.push(shift);
                    placed = true;
                }
                indices.push(c);
                values.push(v);
            }
            if !placed {
                indices.push(r);
                values.push(shift);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    /// Sparse-dense product `self · x`.
    pub fn spmm(&self, x: &Tensor) -> Result<Tensor> {
        if self.cols != x.rows() {
            return Err(Error::shape(
                "spmm",
                format!("{}x{} · {}x{}", self.rows, self.cols, x.rows(), x.cols()),
            ));
        }
        let d = x.cols();
        let mut out = Tensor::zeros(self.rows, d);
        for r in 0..self.rows {
            let out_row = out.row_mut(r);
            for (c, v) in self.row_entries(r) {
                for (o, &xv) in out_row.iter_mut().zip(x.row(c)) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · x`, used by the backward pass of `spmm`.
    pub fn t_spmm(&self, x: &Tensor) -> Result<Tensor> {
        if self.rows != x.rows() {
            return Err(Error::shape(
                "t_spmm",
                format!("({}x{})ᵀ · {}x{}", self.rows, self.cols, x.rows(), x.cols()),
            ));
        }
        let mut out = Tensor::zeros(self.cols, x.cols());
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                for (o, &xv) in out.row_mut(c).iter_mut().zip(x.row(r)) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                t.set(r, c, v);
            }
        }
        t
    }
}
