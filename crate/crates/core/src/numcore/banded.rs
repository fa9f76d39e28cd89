//! Banded LU factorization without pivoting.
//!
//! Used for matrices that are diagonally dominant (implicit transport
//! steps) or symmetric positive definite (prior operator), where pivoting
//! is unnecessary. The transposed solve reuses the same factors, which
//! makes forward and adjoint time stepping exact transposes of each other.

use super::sparse::SparseOperator;
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    /// Row `i` stores columns `i - kl ..= i + ku`; L below, U on and above.
    band: Vec<f64>,
}

impl BandedLu {
    pub fn factor(a: &SparseOperator) -> Result<Self> {
        let n = crate::numcore::LinearMap::nrows(a);
        if n != crate::numcore::LinearMap::ncols(a) {
            return Err(Error::Contract("banded LU needs a square matrix".into()));
        }
        let (kl, ku) = a.bandwidths();
        let width = kl + ku + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                band[i * width + (j + kl - i)] = v;
            }
        }
        let scale = band.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let pivot = band[k * width + kl];
            if pivot.abs() <= 1e-300_f64.max(scale * 1e-15) {
                return Err(Error::SingularPivot(k));
            }
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + ku).min(n - 1);
            for i in k + 1..=last_row {
                let lik = band[i * width + (k + kl - i)] / pivot;
                band[i * width + (k + kl - i)] = lik;
                if lik == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    let ukj = band[k * width + (j + kl - k)];
                    band[i * width + (j + kl - i)] -= lik * ukj;
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            width,
            band,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.band[i * self.width + (j + self.kl - i)]
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("banded solve", self.n, b.len())?;
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = x[i];
            for j in i.saturating_sub(self.kl)..i {
                s -= self.at(i, j) * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + self.ku).min(n - 1) {
                s -= self.at(i, j) * x[j];
            }
            x[i] = s / self.at(i, i);
        }
    }

    /// Solve `A^T x = b` with the same factors.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("banded transpose solve", self.n, b.len())?;
        let mut x = b.to_vec();
        self.solve_transpose_in_place(&mut x);
        Ok(x)
    }

    pub fn solve_transpose_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        // U^T z = b
        for i in 0..n {
            let mut s = x[i];
            for j in i.saturating_sub(self.ku)..i {
                s -= self.at(j, i) * x[j];
            }
            x[i] = s / self.at(i, i);
        }
        // L^T x = z
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + self.kl).min(n - 1) {
                s -= self.at(j, i) * x[j];
            }
            x[i] = s;
        }
    }

    /// Solve for `k` right-hand sides stored row-major (`n x k`).
    pub fn solve_many_in_place(&self, x: &mut [f64], k: usize) {
        assert_eq!(x.len(), self.n * k, "banded multi-solve dimension");
        let n = self.n;
        for i in 0..n {
            for j in i.saturating_sub(self.kl)..i {
                let l = self.at(i, j);
                if l != 0.0 {
                    let (head, tail) = x.split_at_mut(i * k);
                    let src = &head[j * k..(j + 1) * k];
                    for (d, s) in tail[..k].iter_mut().zip(src) {
                        *d -= l * s;
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..=(i + self.ku).min(n - 1) {
                let u = self.at(i, j);
                if u != 0.0 {
                    let (head, tail) = x.split_at_mut(j * k);
                    let src = &tail[..k];
                    for (d, s) in head[i * k..(i + 1) * k].iter_mut().zip(src) {
                        *d -= u * s;
                    }
                }
            }
            let inv = 1.0 / self.at(i, i);
            for d in &mut x[i * k..(i + 1) * k] {
                *d *= inv;
            }
        }
    }

    /// Transposed solve for `k` right-hand sides stored row-major.
    pub fn solve_transpose_many_in_place(&self, x: &mut [f64], k: usize) {
        assert_eq!(x.len(), self.n * k, "banded multi-solve dimension");
        let n = self.n;
        for i in 0..n {
            for j in i.saturating_sub(self.ku)..i {
                let u = self.at(j, i);
                if u != 0.0 {
                    let (head, tail) = x.split_at_mut(i * k);
                    let src = &head[j * k..(j + 1) * k];
                    for (d, s) in tail[..k].iter_mut().zip(src) {
                        *d -= u * s;
                    }
                }
            }
            let inv = 1.0 / self.at(i, i);
            for d in &mut x[i * k..(i + 1) * k] {
                *d *= inv;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..=(i + self.kl).min(n - 1) {
                let l = self.at(j, i);
                if l != 0.0 {
                    let (head, tail) = x.split_at_mut(j * k);
                    let src = &tail[..k];
                    for (d, s) in head[i * k..(i + 1) * k].iter_mut().zip(src) {
                        *d -= l * s;
                    }
                }
            }
        }
    }
}
