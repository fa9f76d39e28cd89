use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::observe::{CandidateSet, ObservationPlan, Observations};
use super::operator::Transport;
use crate::domain::ScalarField;
use crate::error::{check_len, Result};
use crate::numcore::LinearMap;

/// The parameter-to-observable map `m -> (u_k(x_j))_j` with `u_0 = m`.
///
/// `apply_transpose` is the Euclidean transpose, computed by reverse time
/// stepping with the transposed step matrix and point sources. The adjoint
/// in the mass-weighted inner product is [`ForwardMap::adjoint`].
#[derive(Debug, Clone)]
pub struct ForwardMap {
    transport: Arc<Transport>,
    plan: ObservationPlan,
}

impl ForwardMap {
    pub fn new(transport: Arc<Transport>, plan: ObservationPlan) -> Result<Self> {
        let n = transport.n_dof();
        if plan.horizon() > transport.n_steps() + 1 {
            return Err(crate::Error::InvalidArgument(format!(
                "observation plan reads step {} beyond the final step {}",
                plan.horizon() - 1,
                transport.n_steps()
            )));
        }
        if let Some(m) = plan.entries().iter().find(|m| m.dof >= n) {
            return Err(crate::Error::InvalidArgument(format!(
                "observation plan reads dof {} of {n}",
                m.dof
            )));
        }
        Ok(Self { transport, plan })
    }

    pub fn from_candidates(transport: Arc<Transport>, cs: &CandidateSet) -> Result<Self> {
        Self::new(transport, cs.plan())
    }

    pub fn transport(&self) -> &Arc<Transport> {
        &self.transport
    }

    pub fn plan(&self) -> &ObservationPlan {
        &self.plan
    }

    /// Mass-weighted adjoint `M^{-1} F^T y`, so that `<F m, y> = <m, F* y>_M`.
    pub fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("forward adjoint input", self.plan.len(), y.len())?;
        let inv_area = 1.0 / self.transport.grid().cell_area();
        let mut p = self.transpose(y);
        p.iter_mut().for_each(|v| *v *= inv_area);
        Ok(p)
    }

    /// Calls `f(j, row)` with every row `F^T e_j` of the map.
    ///
    /// Rows reading the same cell share one adjoint sweep: the row of a
    /// reading at step `k` is `S^{-T k} e_dof`.
    pub fn for_each_row(&self, mut f: impl FnMut(usize, &[f64])) {
        let n = self.transport.n_dof();
        let mut dofs: Vec<usize> = self.plan.entries().iter().map(|m| m.dof).collect();
        dofs.sort_unstable();
        dofs.dedup();
        let k = dofs.len();
        if k == 0 {
            return;
        }
        let mut col = vec![usize::MAX; n];
        for (c, &d) in dofs.iter().enumerate() {
            col[d] = c;
        }
        let mut lam = vec![0.0; n * k];
        for (c, &d) in dofs.iter().enumerate() {
            lam[d * k + c] = 1.0;
        }
        let mut row = vec![0.0; n];
        for step in 0..self.plan.horizon() {
            if step > 0 {
                self.transport.step_adjoint_many(&mut lam, k);
            }
            for &(j, dof) in self.plan.at_step(step) {
                let c = col[dof];
                for (i, r) in row.iter_mut().enumerate() {
                    *r = lam[i * k + c];
                }
                f(j, &row);
            }
        }
    }

    fn forward(&self, m: &[f64]) -> Vec<f64> {
        assert_eq!(m.len(), self.transport.n_dof(), "forward map input length");
        let mut out = vec![0.0; self.plan.len()];
        let mut u = m.to_vec();
        for k in 0..self.plan.horizon() {
            if k > 0 {
                self.transport.step_forward_in_place(&mut u);
            }
            for &(j, dof) in self.plan.at_step(k) {
                out[j] = u[dof];
            }
        }
        out
    }

    fn transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.plan.len(), "forward map transpose input length");
        let mut p = vec![0.0; self.transport.n_dof()];
        for k in (0..self.plan.horizon()).rev() {
            for &(j, dof) in self.plan.at_step(k) {
                p[dof] += y[j];
            }
            if k > 0 {
                self.transport.step_adjoint_in_place(&mut p);
            }
        }
        p
    }
}

impl LinearMap for ForwardMap {
    fn nrows(&self) -> usize {
        self.plan.len()
    }

    fn ncols(&self) -> usize {
        self.transport.n_dof()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x)
    }

    fn apply_transpose(&self, y: &[f64]) -> Option<Vec<f64>> {
        Some(self.transpose(y))
    }

    fn has_transpose(&self) -> bool {
        true
    }

    fn apply_block(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, c) = (self.transport.n_dof(), x.ncols());
        assert_eq!(x.nrows(), n, "forward map block input rows");
        // column-major c x n is row-major n x c
        let mut u: Vec<f64> = x.transpose().as_slice().to_vec();
        let mut out = DMatrix::zeros(self.plan.len(), c);
        for k in 0..self.plan.horizon() {
            if k > 0 {
                self.transport.step_forward_many(&mut u, c);
            }
            for &(j, dof) in self.plan.at_step(k) {
                for col in 0..c {
                    out[(j, col)] = u[dof * c + col];
                }
            }
        }
        out
    }

    fn apply_transpose_block(&self, y: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let (n, c) = (self.transport.n_dof(), y.ncols());
        assert_eq!(y.nrows(), self.plan.len(), "forward map block transpose rows");
        let mut p = vec![0.0; n * c];
        for k in (0..self.plan.horizon()).rev() {
            for &(j, dof) in self.plan.at_step(k) {
                for col in 0..c {
                    p[dof * c + col] += y[(j, col)];
                }
            }
            if k > 0 {
                self.transport.step_adjoint_many(&mut p, c);
            }
        }
        Some(DMatrix::from_row_slice(n, c, &p))
    }
}

/// States saved every `stride` steps (always including step 0 and the last).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<usize>,
    pub states: Vec<ScalarField>,
}

/// Runs the forward model to the final time from `m`, recording the
/// thinned trajectory and the readings of `cs`.
pub fn solve_forward(
    transport: &Transport,
    m: &ScalarField,
    cs: &CandidateSet,
    stride: usize,
) -> Result<(Trajectory, Vec<f64>)> {
    check_len("initial condition", transport.n_dof(), m.values().len())?;
    let plan = cs.plan();
    let stride = stride.max(1);
    let mut obs = vec![0.0; plan.len()];
    let mut traj = Trajectory {
        steps: Vec::new(),
        states: Vec::new(),
    };
    let mut u = m.values().to_vec();
    let last = transport.n_steps();
    for k in 0..=last {
        if k > 0 {
            transport.step_forward_in_place(&mut u);
        }
        for &(j, dof) in plan.at_step(k) {
            obs[j] = u[dof];
        }
        if k % stride == 0 || k == last {
            traj.steps.push(k);
            traj.states.push(ScalarField::new(transport.grid().clone(), u.clone())?);
        }
    }
    Ok((traj, obs))
}

/// `d = F(truth) + sigma * xi` with seeded standard normal `xi`.
pub fn simulate_measurements(
    transport: &Arc<Transport>,
    truth: &ScalarField,
    cs: &CandidateSet,
    sigma: f64,
    seed: u64,
) -> Result<Observations> {
    check_len("truth", transport.n_dof(), truth.values().len())?;
    let f = ForwardMap::from_candidates(transport.clone(), cs)?;
    let mut d = f.apply(truth.values());
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut d {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * xi;
        }
    }
    Observations::new(cs, d, sigma)
}
