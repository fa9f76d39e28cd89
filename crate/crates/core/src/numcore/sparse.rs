use nalgebra::DMatrix;

use super::linear_map::LinearMap;
use crate::error::{check_len, Error, Result};

/// Compressed-row sparse matrix.
///
/// Duplicate triplets are summed during assembly, so every stored
/// `(row, col)` pair is unique and column indices are sorted per row.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    symmetric: bool,
}

impl SparseOperator {
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        if nrows == 0 || ncols == 0 {
            return Err(Error::Contract("sparse operator needs positive dimensions".into()));
        }
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(i, j, v) in &entries {
            if i >= nrows || j >= ncols {
                return Err(Error::Contract(format!(
                    "triplet ({i}, {j}) outside {nrows}x{ncols}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Contract(format!("non-finite entry at ({i}, {j})")));
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(j);
            values.push(v);
            row_ptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
            symmetric: false,
        })
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        Self::from_triplets(n, n, diag.iter().enumerate().map(|(i, &v)| (i, i, v)))
            .map(|m| Self { symmetric: true, ..m })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::diagonal(&vec![1.0; n])
    }

    /// Flag the operator as symmetric after verifying it entry-wise.
    pub fn into_symmetric(mut self) -> Result<Self> {
        if !self.check_symmetry(1e-12) {
            return Err(Error::Contract("operator is not symmetric".into()));
        }
        self.symmetric = true;
        Ok(self)
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Entry-wise symmetry within `rtol` relative to the largest entry.
    pub fn check_symmetry(&self, rtol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let scale = self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        (0..self.nrows).all(|i| {
            self.row(i)
                .all(|(j, v)| (v - self.get(j, i)).abs() <= rtol * scale.max(f64::MIN_POSITIVE))
        })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// True when every stored entry sits on the diagonal.
    pub fn is_diagonal(&self) -> bool {
        (0..self.nrows).all(|i| self.row(i).all(|(j, _)| j == i))
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.nrows {
            for (j, _) in self.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("sparse matvec", self.ncols, x.len())?;
        Ok(self.mul_vec_unchecked(x))
    }

    fn mul_vec_unchecked(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn mul_transpose_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("sparse transpose matvec", self.nrows, y.len())?;
        let mut out = vec![0.0; self.ncols];
        for (i, &yi) in y.iter().enumerate() {
            for (j, v) in self.row(i) {
                out[j] += v * yi;
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

impl LinearMap for SparseOperator {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "sparse matvec dimension");
        self.mul_vec_unchecked(x)
    }
    fn apply_transpose(&self, y: &[f64]) -> Option<Vec<f64>> {
        Some(self.mul_transpose_vec(y).expect("sparse transpose dimension"))
    }
    fn has_transpose(&self) -> bool {
        true
    }
}
