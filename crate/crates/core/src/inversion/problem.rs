use std::sync::Arc;

use nalgebra::DMatrix;

use super::design::{DesignWeights, WeightLayout};
use super::lowrank::LowRankPosterior;
use super::to_row_major;
use crate::error::{check_len, Error, Result};
use crate::numcore::{cg_solve_from, randomized_gen_eig, LinearMap, RandomizedOptions, SparseOperator};
use crate::prior::BiLaplacianPrior;

/// A parameter-to-observable map with a Euclidean transpose.
pub type SharedMap = Arc<dyn LinearMap + Send + Sync>;

/// Forward map, prior, noise level and weight layout of one inverse problem.
///
/// With lumped mass `M`, prior precision `R = A M^{-1} A` and per-measurement
/// weights `W~ = sigma^{-2} diag(w)`, the symmetric Hessian is
/// `H_s = F^T W~ F + R` and the mass-weighted Hessian is `H = M^{-1} H_s`.
#[derive(Clone)]
pub struct InverseProblem {
    forward: SharedMap,
    prior: Arc<BiLaplacianPrior>,
    sigma: f64,
    layout: WeightLayout,
}

#[derive(Debug, Clone)]
pub struct MapSolution {
    pub m: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl InverseProblem {
    pub fn new(
        forward: SharedMap,
        prior: Arc<BiLaplacianPrior>,
        sigma: f64,
        layout: WeightLayout,
    ) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise sigma must be positive, got {sigma}")));
        }
        if !forward.has_transpose() {
            return Err(Error::Contract("forward map needs a transpose".into()));
        }
        check_len("forward map columns", prior.n_dof(), forward.ncols())?;
        check_len("weight layout", forward.nrows(), layout.n_measurements())?;
        Ok(Self {
            forward,
            prior,
            sigma,
            layout,
        })
    }

    pub fn forward(&self) -> &SharedMap {
        &self.forward
    }

    pub fn prior(&self) -> &Arc<BiLaplacianPrior> {
        &self.prior
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn layout(&self) -> &WeightLayout {
        &self.layout
    }

    pub fn n_dof(&self) -> usize {
        self.prior.n_dof()
    }

    pub fn q(&self) -> usize {
        self.layout.q()
    }

    /// Same problem with a different noise level.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.forward.clone(), self.prior.clone(), sigma, self.layout.clone())
    }

    /// `sigma^{-2} w_j` for every measurement.
    pub fn noise_weights(&self, w: &DesignWeights) -> Result<Vec<f64>> {
        let s2 = 1.0 / (self.sigma * self.sigma);
        Ok(self.layout.expand(w.as_slice())?.into_iter().map(|v| v * s2).collect())
    }

    /// `F^T W~ F m`.
    pub fn misfit_action(&self, m: &[f64], noise_w: &[f64]) -> Result<Vec<f64>> {
        check_len("misfit input", self.n_dof(), m.len())?;
        let mut y = self.forward.apply(m);
        for (v, w) in y.iter_mut().zip(noise_w) {
            *v *= w;
        }
        Ok(self.forward.apply_transpose(&y).expect("transpose checked"))
    }

    /// `H_s m = F^T W~ F m + R m`.
    pub fn hessian_sym_action(&self, m: &[f64], noise_w: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.misfit_action(m, noise_w)?;
        for (o, r) in out.iter_mut().zip(self.prior.apply_r(m)?) {
            *o += r;
        }
        Ok(out)
    }

    /// `H(w) m = F* W~ F m + Gamma_pr^{-1} m`, with `F* = M^{-1} F^T`.
    pub fn hessian_action(&self, m: &[f64], w: &DesignWeights) -> Result<Vec<f64>> {
        let nw = self.noise_weights(w)?;
        let inv_area = 1.0 / self.prior.area();
        Ok(self
            .hessian_sym_action(m, &nw)?
            .into_iter()
            .map(|v| v * inv_area)
            .collect())
    }

    /// MAP point: `H_s m = F^T W~ d + R m_pr`, solved by one Newton step
    /// from the prior mean with preconditioned CG.
    ///
    /// The preconditioner is the low-rank posterior when given, otherwise
    /// the prior covariance `R^{-1}`.
    pub fn solve_map(
        &self,
        d: &[f64],
        w: &DesignWeights,
        precond: Option<&LowRankPosterior>,
        tol: f64,
    ) -> Result<MapSolution> {
        check_len("observations", self.forward.nrows(), d.len())?;
        let nw = self.noise_weights(w)?;
        let m0 = self.prior.mean().to_vec();
        // gradient of the negative log posterior at m0 (symmetric form)
        let f0 = self.forward.apply(&m0);
        let resid: Vec<f64> = f0.iter().zip(d).zip(&nw).map(|((f, d), w)| w * (f - d)).collect();
        let grad = self.forward.apply_transpose(&resid).expect("transpose checked");
        let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        let op = HessianOp {
            problem: self,
            noise_w: &nw,
        };
        let pc = PosteriorPrecond {
            prior: &self.prior,
            lowrank: precond,
        };
        let sol = cg_solve_from(&op, &rhs, None, tol, 4 * self.n_dof().max(50), Some(&pc))?;
        let m: Vec<f64> = m0.iter().zip(&sol.x).map(|(a, b)| a + b).collect();
        // convergence check on the full normal equations
        let mut full_rhs = self.forward.apply_transpose(
            &d.iter().zip(&nw).map(|(d, w)| d * w).collect::<Vec<_>>(),
        )
        .expect("transpose checked");
        for (r, p) in full_rhs.iter_mut().zip(self.prior.apply_r(&m0)?) {
            *r += p;
        }
        let hm = self.hessian_sym_action(&m, &nw)?;
        let num: f64 = hm.iter().zip(&full_rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = full_rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let residual = if den > 0.0 { num / den } else { num };
        Ok(MapSolution {
            m,
            iterations: sol.iterations,
            residual,
        })
    }

    /// Goal variance `<c, Gamma_post(w) c>_M = (M c)^T H_s^{-1} (M c)` by
    /// preconditioned CG.
    pub fn goal_variance(
        &self,
        c: &[f64],
        w: &DesignWeights,
        precond: Option<&LowRankPosterior>,
        tol: f64,
    ) -> Result<f64> {
        check_len("goal vector", self.n_dof(), c.len())?;
        let nw = self.noise_weights(w)?;
        let mc: Vec<f64> = c.iter().map(|v| v * self.prior.area()).collect();
        let op = HessianOp {
            problem: self,
            noise_w: &nw,
        };
        let pc = PosteriorPrecond {
            prior: &self.prior,
            lowrank: precond,
        };
        let sol = cg_solve_from(&op, &mc, None, tol, 4 * self.n_dof().max(50), Some(&pc))?;
        Ok(mc.iter().zip(&sol.x).map(|(a, b)| a * b).sum())
    }

    /// Leading eigenpairs of `F^T W~ F v = lambda R v`, giving
    /// `H_s^{-1} ~= R^{-1} - V D V^T`, `D = diag(lambda / (1 + lambda))`.
    ///
    /// The rank is capped by the number of measurements with nonzero weight;
    /// eigenvalues below `floor` are dropped.
    pub fn build_lowrank(
        &self,
        w: &DesignWeights,
        rank: usize,
        floor: f64,
        opts: RandomizedOptions,
    ) -> Result<LowRankPosterior> {
        let nw = self.noise_weights(w)?;
        let active = nw.iter().filter(|&&v| v != 0.0).count();
        let rank = rank.min(active).min(self.n_dof());
        let op = PreconditionedMisfit {
            problem: self,
            noise_w: &nw,
        };
        let metric = SparseOperator::diagonal(&vec![self.prior.area(); self.n_dof()])?;
        let eig = randomized_gen_eig(&op, &metric, rank, opts)?;
        // u is M-orthonormal; v = A^{-1} M u is R-orthonormal.
        let keep = eig.values.iter().take_while(|&&l| l >= floor).count();
        let mut v = eig.vectors.columns(0, keep).into_owned() * self.prior.area();
        let mut buf = to_row_major(&v);
        self.prior.solve_a_many(&mut buf, keep);
        v = DMatrix::from_row_slice(self.n_dof(), keep, &buf);
        LowRankPosterior::new(
            self.prior.clone(),
            eig.values[..keep].to_vec(),
            v,
            w.as_slice().to_vec(),
        )
    }
}

struct HessianOp<'a> {
    problem: &'a InverseProblem,
    noise_w: &'a [f64],
}

impl LinearMap for HessianOp<'_> {
    fn nrows(&self) -> usize {
        self.problem.n_dof()
    }
    fn ncols(&self) -> usize {
        self.problem.n_dof()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.problem
            .hessian_sym_action(x, self.noise_w)
            .expect("hessian dimensions")
    }
}

struct PosteriorPrecond<'a> {
    prior: &'a BiLaplacianPrior,
    lowrank: Option<&'a LowRankPosterior>,
}

impl LinearMap for PosteriorPrecond<'_> {
    fn nrows(&self) -> usize {
        self.prior.n_dof()
    }
    fn ncols(&self) -> usize {
        self.prior.n_dof()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self.lowrank {
            Some(lr) => lr.apply_hessian_inverse(x).expect("preconditioner dimensions"),
            None => self.prior.apply_r_inv(x).expect("preconditioner dimensions"),
        }
    }
}

/// `K = M A^{-1} F^T W~ F A^{-1} M`, symmetric; `K u = lambda M u` is the
/// prior-preconditioned misfit pencil after the substitution `v = A^{-1} M u`.
struct PreconditionedMisfit<'a> {
    problem: &'a InverseProblem,
    noise_w: &'a [f64],
}

impl PreconditionedMisfit<'_> {
    fn a_inv_m(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let prior = &self.problem.prior;
        let (n, k) = (x.nrows(), x.ncols());
        let mut buf = to_row_major(x);
        buf.iter_mut().for_each(|v| *v *= prior.area());
        prior.solve_a_many(&mut buf, k);
        DMatrix::from_row_slice(n, k, &buf)
    }

    fn m_a_inv(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        // A and M are symmetric and M is a multiple of the identity
        self.a_inv_m(x)
    }
}

impl LinearMap for PreconditionedMisfit<'_> {
    fn nrows(&self) -> usize {
        self.problem.n_dof()
    }
    fn ncols(&self) -> usize {
        self.problem.n_dof()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let col = DMatrix::from_column_slice(x.len(), 1, x);
        self.apply_block(&col).as_slice().to_vec()
    }
    fn apply_transpose(&self, y: &[f64]) -> Option<Vec<f64>> {
        Some(self.apply(y))
    }
    fn has_transpose(&self) -> bool {
        true
    }
    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let f = &self.problem.forward;
        let mut y = f.apply_block(&self.a_inv_m(x));
        for (i, mut row) in y.row_iter_mut().enumerate() {
            row.scale_mut(self.noise_w[i]);
        }
        let back = f.apply_transpose_block(&y).expect("transpose checked");
        self.m_a_inv(&back)
    }
}
