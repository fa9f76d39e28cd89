//! Truncated-SVD surrogates of the parameter-to-observable map.
//!
//! With lumped mass `M` the map is factored in mass-weighted coordinates:
//!
//! * plain: `F ~= V S U^T M`,
//! * prior-preconditioned: `F A^{-1} M ~= V S U^T M`, hence `F ~= V S U^T A`,
//!
//! with `U` `M`-orthonormal (`n_dof x r`) and `V` orthonormal (`q x r`).

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::inversion::to_row_major;
use crate::numcore::{randomized_svd, LinearMap, RandomizedOptions};
use crate::prior::BiLaplacianPrior;
use crate::transport::ForwardMap;

#[derive(Debug, Clone)]
pub struct RomOperator {
    u: DMatrix<f64>,
    s: Vec<f64>,
    v: DMatrix<f64>,
    preconditioned: bool,
    prior: Arc<BiLaplacianPrior>,
    /// Singular values of the whole sketch, for tail reporting.
    sketch_values: Vec<f64>,
}

/// `F A^{-1} M^{1/2}` (preconditioned) or `F M^{-1/2}` (plain).
struct Whitened<'a> {
    forward: &'a dyn LinearMap,
    prior: &'a BiLaplacianPrior,
    preconditioned: bool,
}

impl Whitened<'_> {
    fn right(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let a = self.prior.area();
        if self.preconditioned {
            let (n, k) = (x.nrows(), x.ncols());
            let mut buf = to_row_major(x);
            buf.iter_mut().for_each(|v| *v *= a.sqrt());
            self.prior.solve_a_many(&mut buf, k);
            DMatrix::from_row_slice(n, k, &buf)
        } else {
            x / a.sqrt()
        }
    }
}

impl LinearMap for Whitened<'_> {
    fn nrows(&self) -> usize {
        self.forward.nrows()
    }
    fn ncols(&self) -> usize {
        self.forward.ncols()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let col = DMatrix::from_column_slice(x.len(), 1, x);
        self.apply_block(&col).as_slice().to_vec()
    }
    fn apply_transpose(&self, y: &[f64]) -> Option<Vec<f64>> {
        let col = DMatrix::from_column_slice(y.len(), 1, y);
        self.apply_transpose_block(&col).map(|m| m.as_slice().to_vec())
    }
    fn has_transpose(&self) -> bool {
        true
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward.apply_block(&self.right(x))
    }
    fn apply_transpose_block(&self, y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        // A and M are symmetric
        let back = self.forward.apply_transpose_block(y)?;
        Some(self.right(&back))
    }
}

/// Randomized SVD of the (optionally prior-preconditioned) forward map.
pub fn build_rom(
    forward: &dyn LinearMap,
    prior: &Arc<BiLaplacianPrior>,
    rank: usize,
    preconditioned: bool,
    opts: RandomizedOptions,
) -> Result<RomOperator> {
    check_len("forward map columns", prior.n_dof(), forward.ncols())?;
    let op = Whitened {
        forward,
        prior,
        preconditioned,
    };
    let svd = randomized_svd(&op, rank, opts)?;
    let u = svd.v / prior.area().sqrt();
    Ok(RomOperator {
        u,
        s: svd.s,
        v: svd.u,
        preconditioned,
        prior: prior.clone(),
        sketch_values: svd.sketch_values,
    })
}

/// Squared Frobenius norm of the whitened map (`F A^{-1} M^{1/2}` or
/// `F M^{-1/2}`), i.e. the sum of all its squared singular values.
pub fn whitened_energy(
    forward: &ForwardMap,
    prior: &BiLaplacianPrior,
    preconditioned: bool,
) -> Result<f64> {
    check_len("forward map columns", prior.n_dof(), forward.ncols())?;
    let a = prior.area();
    let mut total = 0.0;
    forward.for_each_row(|_, row| {
        if preconditioned {
            let z = prior.solve_a(row);
            total += a * z.iter().map(|v| v * v).sum::<f64>();
        } else {
            total += row.iter().map(|v| v * v).sum::<f64>() / a;
        }
    });
    Ok(total)
}

impl RomOperator {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn n_dof(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.v.nrows()
    }

    pub fn is_preconditioned(&self) -> bool {
        self.preconditioned
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.s
    }

    pub fn sketch_values(&self) -> &[f64] {
        &self.sketch_values
    }

    /// `M`-orthonormal input basis.
    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    /// Orthonormal output basis.
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn prior(&self) -> &Arc<BiLaplacianPrior> {
        &self.prior
    }

    /// `sigma_{r+1} / sigma_1` from the sketch (0 when nothing was discarded).
    pub fn tail_ratio(&self) -> f64 {
        let r = self.rank();
        match (self.sketch_values.first(), self.sketch_values.get(r)) {
            (Some(&s1), Some(&sr)) if s1 > 0.0 => sr / s1,
            _ => 0.0,
        }
    }

    /// Leading `r` singular triplets.
    pub fn truncate(&self, r: usize) -> Result<Self> {
        if r == 0 || r > self.rank() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate rank {} to {r}",
                self.rank()
            )));
        }
        Ok(Self {
            u: self.u.columns(0, r).into_owned(),
            s: self.s[..r].to_vec(),
            v: self.v.columns(0, r).into_owned(),
            preconditioned: self.preconditioned,
            prior: self.prior.clone(),
            sketch_values: self.sketch_values.clone(),
        })
    }

    /// Smallest truncation whose tail ratio is at most `tol`, if any.
    pub fn truncate_to_tail(&self, tol: f64) -> Option<Self> {
        let s1 = *self.sketch_values.first()?;
        (1..=self.rank())
            .find(|&r| self.sketch_values.get(r).is_none_or(|&s| s <= tol * s1))
            .map(|r| self.truncate(r).expect("rank in range"))
    }

    /// Rows of `V S`: row `j` is the reduced representation of measurement `j`.
    pub fn scaled_outputs(&self) -> DMatrix<f64> {
        let mut vs = self.v.clone();
        for (k, mut col) in vs.column_iter_mut().enumerate() {
            col *= self.s[k];
        }
        vs
    }

    /// Reduced coordinates `U^T M m` (plain) or `U^T A m` (preconditioned).
    fn reduce(&self, m: &[f64]) -> Vec<f64> {
        let x = if self.preconditioned {
            self.prior.apply_a(m)
        } else {
            m.iter().map(|v| v * self.prior.area()).collect()
        };
        let ux = self.u.tr_mul(&nalgebra::DVector::from_vec(x));
        ux.iter().zip(&self.s).map(|(a, s)| a * s).collect()
    }

    /// Surrogate of `F m`.
    pub fn apply_rom(&self, m: &[f64]) -> Result<Vec<f64>> {
        check_len("rom input", self.n_dof(), m.len())?;
        let z = self.reduce(m);
        Ok((&self.v * nalgebra::DVector::from_vec(z)).as_slice().to_vec())
    }

    /// `U S V^T y`: the adjoint of [`RomOperator::apply_rom`] in the mass
    /// inner product for the plain ROM. For the preconditioned ROM the
    /// adjoint is `M^{-1} A U S V^T y`.
    pub fn apply_rom_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("rom adjoint input", self.n_outputs(), y.len())?;
        let vy = self.v.tr_mul(&nalgebra::DVector::from_column_slice(y));
        let z = nalgebra::DVector::from_iterator(vy.len(), vy.iter().zip(&self.s).map(|(a, s)| a * s));
        let usv = &self.u * z;
        if self.preconditioned {
            let inv_area = 1.0 / self.prior.area();
            Ok(self.prior.apply_a(usv.as_slice()).into_iter().map(|v| v * inv_area).collect())
        } else {
            Ok(usv.as_slice().to_vec())
        }
    }

    /// Text artifact: `ROM r n_dof q precond_flag`, then the singular values,
    /// `n_dof` lines of `U` and `q` lines of `V` (row-wise), then the sketch
    /// values.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "ROM {} {} {} {}",
            self.rank(),
            self.n_dof(),
            self.n_outputs(),
            u8::from(self.preconditioned)
        )?;
        writeln!(out, "{}", join(self.s.iter()))?;
        for row in self.u.row_iter() {
            writeln!(out, "{}", join(row.iter()))?;
        }
        for row in self.v.row_iter() {
            writeln!(out, "{}", join(row.iter()))?;
        }
        writeln!(out, "{}", join(self.sketch_values.iter()))?;
        Ok(())
    }

    pub fn read<R: BufRead>(input: R, prior: Arc<BiLaplacianPrior>, path: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        let mut lines = input.lines().enumerate();
        let mut next = || -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(err(0, "unexpected end of file".into())),
            }
        };
        let (_, header) = next()?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != "ROM" {
            return Err(err(1, format!("bad header '{header}'")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|e| err(1, format!("bad count '{s}': {e}")));
        let (r, n, q) = (num(parts[1])?, num(parts[2])?, num(parts[3])?);
        let preconditioned = match parts[4] {
            "0" => false,
            "1" => true,
            other => return Err(err(1, format!("bad preconditioning flag '{other}'"))),
        };
        if n != prior.n_dof() {
            return Err(err(1, format!("file has {n} dofs, prior has {}", prior.n_dof())));
        }
        let mut row = |expect: usize| -> Result<Vec<f64>> {
            let (no, line) = next()?;
            let vals = parse_floats(&line).map_err(|m| err(no, m))?;
            if vals.len() != expect {
                return Err(err(no, format!("expected {expect} values, got {}", vals.len())));
            }
            Ok(vals)
        };
        let s = row(r)?;
        let mut u = DMatrix::zeros(n, r);
        for i in 0..n {
            u.row_mut(i).copy_from_slice(&row(r)?);
        }
        let mut v = DMatrix::zeros(q, r);
        for i in 0..q {
            v.row_mut(i).copy_from_slice(&row(r)?);
        }
        let (no, line) = next()?;
        let sketch_values = parse_floats(&line).map_err(|m| err(no, m))?;
        Ok(Self {
            u,
            s,
            v,
            preconditioned,
            prior,
            sketch_values,
        })
    }
}

impl LinearMap for RomOperator {
    fn nrows(&self) -> usize {
        self.n_outputs()
    }
    fn ncols(&self) -> usize {
        self.n_dof()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.apply_rom(x).expect("rom input length")
    }
    /// Euclidean transpose: `M U S V^T y` (plain) or `A U S V^T y`.
    fn apply_transpose(&self, y: &[f64]) -> Option<Vec<f64>> {
        let mut p = self.apply_rom_adjoint(y).ok()?;
        p.iter_mut().for_each(|v| *v *= self.prior.area());
        Some(p)
    }
    fn has_transpose(&self) -> bool {
        true
    }
}

fn join<'a>(it: impl Iterator<Item = &'a f64>) -> String {
    it.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

fn parse_floats(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| format!("bad number '{t}': {e}")))
        .collect()
}
