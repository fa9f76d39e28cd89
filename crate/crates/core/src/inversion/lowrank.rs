use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::prior::BiLaplacianPrior;

/// Eigenvalues below this are dropped when building the low-rank posterior.
pub const DEFAULT_EIGEN_FLOOR: f64 = 1e-10;

/// `H_s^{-1} ~= R^{-1} - V D V^T` with `V` `R`-orthonormal and
/// `D = diag(lambda / (1 + lambda))`; the posterior covariance in the mass
/// metric is `Gamma_post x = H_s^{-1} M x`.
#[derive(Debug, Clone)]
pub struct LowRankPosterior {
    prior: Arc<BiLaplacianPrior>,
    values: Vec<f64>,
    d: Vec<f64>,
    v: DMatrix<f64>,
    design: Vec<f64>,
}

/// Diagonal estimate with its relative Monte-Carlo standard error.
#[derive(Debug, Clone)]
pub struct VarianceEstimate {
    pub values: Vec<f64>,
    /// Mean over cells of (standard error / estimate).
    pub rel_error: f64,
}

impl LowRankPosterior {
    pub fn new(
        prior: Arc<BiLaplacianPrior>,
        values: Vec<f64>,
        v: DMatrix<f64>,
        design: Vec<f64>,
    ) -> Result<Self> {
        check_len("low-rank vectors rows", prior.n_dof(), v.nrows())?;
        check_len("low-rank vector count", values.len(), v.ncols())?;
        if let Some(l) = values.iter().find(|&&l| !(l >= -1e-10) || !l.is_finite()) {
            return Err(Error::Contract(format!("negative eigenvalue {l} in low-rank posterior")));
        }
        let d = values.iter().map(|l| l / (1.0 + l)).collect();
        Ok(Self {
            prior,
            values,
            d,
            v,
            design,
        })
    }

    /// Posterior equal to the prior.
    pub fn prior_only(prior: Arc<BiLaplacianPrior>) -> Self {
        let n = prior.n_dof();
        Self {
            prior,
            values: vec![],
            d: vec![],
            v: DMatrix::zeros(n, 0),
            design: vec![],
        }
    }

    pub fn prior(&self) -> &Arc<BiLaplacianPrior> {
        &self.prior
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn design(&self) -> &[f64] {
        &self.design
    }

    fn low_rank_correction(&self, x: &[f64], out: &mut [f64]) {
        for k in 0..self.rank() {
            let col = self.v.column(k);
            let c = self.d[k] * col.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            for (o, vi) in out.iter_mut().zip(col.iter()) {
                *o -= c * vi;
            }
        }
    }

    /// `H_s^{-1} x ~= R^{-1} x - V D V^T x`.
    pub fn apply_hessian_inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.prior.apply_r_inv(x)?;
        self.low_rank_correction(x, &mut out);
        Ok(out)
    }

    /// `Gamma_post x ~= Gamma_pr x - V D V^T M x`.
    pub fn apply_cov(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("posterior covariance input", self.prior.n_dof(), x.len())?;
        let mx: Vec<f64> = x.iter().map(|v| v * self.prior.area()).collect();
        self.apply_hessian_inverse(&mx)
    }

    /// Exact diagonal of `R^{-1} - V D V^T`, the pointwise variance of the
    /// posterior coefficients.
    pub fn variance_exact(&self) -> Vec<f64> {
        let mut out = self.prior.variance().to_vec();
        for k in 0..self.rank() {
            for (o, vi) in out.iter_mut().zip(self.v.column(k).iter()) {
                *o -= self.d[k] * vi * vi;
            }
        }
        out
    }

    /// Hutchinson estimate of the same diagonal with `n_probe` Rademacher
    /// probes.
    pub fn pointwise_variance(&self, n_probe: usize, seed: u64) -> Result<VarianceEstimate> {
        if n_probe == 0 {
            return Err(Error::InvalidArgument("need at least one probe".into()));
        }
        let n = self.prior.n_dof();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        for _ in 0..n_probe {
            let z: Vec<f64> = (0..n)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect();
            let cz = self.apply_hessian_inverse(&z)?;
            for i in 0..n {
                let s = z[i] * cz[i];
                sum[i] += s;
                sq[i] += s * s;
            }
        }
        let p = n_probe as f64;
        let values: Vec<f64> = sum.iter().map(|s| s / p).collect();
        let rel_error = if n_probe > 1 {
            (0..n)
                .map(|i| {
                    let var = ((sq[i] - p * values[i] * values[i]) / (p - 1.0)).max(0.0);
                    (var / p).sqrt() / values[i].abs().max(f64::MIN_POSITIVE)
                })
                .sum::<f64>()
                / n as f64
        } else {
            f64::INFINITY
        };
        Ok(VarianceEstimate { values, rel_error })
    }

    /// Text artifact: `LRPOST r n_dof`, the eigenvalues, then one line per
    /// `R`-orthonormal vector.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.prior.n_dof();
        writeln!(out, "LRPOST {} {n}", self.rank())?;
        writeln!(out, "{}", join(self.values.iter()))?;
        for k in 0..self.rank() {
            writeln!(out, "{}", join(self.v.column(k).iter()))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R, prior: Arc<BiLaplacianPrior>, path: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_string(),
            line,
            msg,
        };
        let mut lines = input.lines();
        let mut next = |no: usize| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| err(no, "unexpected end of file".into()))
        };
        let header = next(1)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "LRPOST" {
            return Err(err(1, format!("bad header '{header}'")));
        }
        let r: usize = parts[1].parse().map_err(|e| err(1, format!("bad rank: {e}")))?;
        let n: usize = parts[2].parse().map_err(|e| err(1, format!("bad dof count: {e}")))?;
        if n != prior.n_dof() {
            return Err(err(1, format!("file has {n} dofs, prior has {}", prior.n_dof())));
        }
        let values = parse_floats(&next(2)?).map_err(|m| err(2, m))?;
        if values.len() != r {
            return Err(err(2, format!("expected {r} eigenvalues, got {}", values.len())));
        }
        let mut v = DMatrix::zeros(n, r);
        for k in 0..r {
            let col = parse_floats(&next(3 + k)?).map_err(|m| err(3 + k, m))?;
            if col.len() != n {
                return Err(err(3 + k, format!("expected {n} entries, got {}", col.len())));
            }
            v.column_mut(k).copy_from_slice(&col);
        }
        Self::new(prior, values, v, vec![])
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
