use std::io::Write;

use nalgebra::{DMatrix, DVector};

use super::goal::GoalVector;
use crate::error::{check_len, Error, Result};
use crate::inversion::{DesignWeights, InverseProblem, LowRankPosterior, WeightLayout, DEFAULT_EIGEN_FLOOR};
use crate::numcore::RandomizedOptions;
use crate::prior::BiLaplacianPrior;
use crate::rom::RomOperator;

/// Goal, sparsity weight, binarization level and low-rank budget.
#[derive(Debug, Clone)]
pub struct DesignProblem {
    pub goal: GoalVector,
    pub alpha: f64,
    pub threshold: f64,
    pub rank: usize,
}

impl DesignProblem {
    pub fn new(goal: GoalVector, alpha: f64, threshold: f64, rank: usize) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be non-negative, got {alpha}")));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in (0, 1), got {threshold}"
            )));
        }
        Ok(Self {
            goal,
            alpha,
            threshold,
            rank,
        })
    }
}

/// Objective value split into data term and penalty, with the gradient of
/// the sum.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub data: f64,
    pub penalty: f64,
    pub grad: Vec<f64>,
}

impl Evaluation {
    pub fn value(&self) -> f64 {
        self.data + self.penalty
    }
}

/// Goal variance `<c, Gamma_post(w) c>_M` and its gradient in `w`.
pub trait DesignObjective: Sync {
    fn q(&self) -> usize;

    /// `(data term, gradient of the data term)`.
    fn data_term(&self, w: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn label(&self) -> &'static str;

    /// Data term plus `alpha * sum(w)` (weights are non-negative, so this is
    /// the l1 norm).
    fn evaluate(&self, w: &[f64], alpha: f64) -> Result<Evaluation> {
        check_len("design weights", self.q(), w.len())?;
        let (data, mut grad) = self.data_term(w)?;
        grad.iter_mut().for_each(|g| *g += alpha);
        Ok(Evaluation {
            data,
            penalty: alpha * w.iter().sum::<f64>(),
            grad,
        })
    }
}

/// Rebuilds the low-rank posterior of the full model for every design.
///
/// Gradient component `i` is `-sigma^{-2} sum_j (F q)_j^2` over the
/// measurements owned by `i`, with `q = Gamma_post c`.
pub struct FullObjective {
    problem: InverseProblem,
    c: Vec<f64>,
    rank: usize,
    opts: RandomizedOptions,
}

impl FullObjective {
    pub fn new(problem: InverseProblem, goal: &GoalVector, rank: usize, opts: RandomizedOptions) -> Result<Self> {
        check_len("goal vector", problem.n_dof(), goal.c.len())?;
        Ok(Self {
            problem,
            c: goal.c.clone(),
            rank,
            opts,
        })
    }

    pub fn posterior(&self, w: &[f64]) -> Result<LowRankPosterior> {
        self.problem.build_lowrank(
            &DesignWeights::new(w.to_vec())?,
            self.rank,
            DEFAULT_EIGEN_FLOOR,
            self.opts,
        )
    }
}

impl DesignObjective for FullObjective {
    fn q(&self) -> usize {
        self.problem.q()
    }

    fn label(&self) -> &'static str {
        "full"
    }

    fn data_term(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let lr = self.posterior(w)?;
        let q = lr.apply_cov(&self.c)?;
        let area = self.problem.prior().area();
        let value = area * self.c.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
        let fq = self.problem.forward().apply(&q);
        let s2 = 1.0 / self.problem.sigma().powi(2);
        let per: Vec<f64> = fq.iter().map(|v| -s2 * v * v).collect();
        Ok((value, self.problem.layout().reduce(&per)?))
    }
}

/// Goal variance of the surrogate model `F ~= V S U^T A` from a
/// prior-preconditioned ROM.
///
/// With `a_j` the rows of `V S`, `T(w) = sum_j omega_j a_j a_j^T`
/// (`omega_j = sigma^{-2}` times the measurement weight) and
/// `g = U^T M A^{-1} M c`:
///
/// `J(w) = <c, Gamma_pr c>_M - g^T g + g^T (I + T)^{-1} g`,
/// `dJ/dw_i = -sigma^{-2} sum_{j in i} (a_j^T (I + T)^{-1} g)^2`.
pub struct RomObjective {
    rows: DMatrix<f64>,
    u: DMatrix<f64>,
    layout: WeightLayout,
    sigma: f64,
    g: DVector<f64>,
    prior_value: f64,
    fixed_t: DMatrix<f64>,
    prior: std::sync::Arc<BiLaplacianPrior>,
}

impl RomObjective {
    pub fn new(rom: &RomOperator, layout: WeightLayout, sigma: f64, goal: &GoalVector) -> Result<Self> {
        let rows = rom.scaled_outputs();
        Self::from_rows(rom, rows, layout, sigma, goal)
    }

    /// Uses only the ROM outputs listed in `select`, in that order; the
    /// layout refers to positions in `select`.
    pub fn from_selection(
        rom: &RomOperator,
        select: &[usize],
        layout: WeightLayout,
        sigma: f64,
        goal: &GoalVector,
    ) -> Result<Self> {
        Self::from_scaled_selection(rom, &rom.scaled_outputs(), select, layout, sigma, goal)
    }

    /// As [`RomObjective::from_selection`] with `scaled` the precomputed
    /// [`RomOperator::scaled_outputs`].
    pub fn from_scaled_selection(
        rom: &RomOperator,
        scaled: &DMatrix<f64>,
        select: &[usize],
        layout: WeightLayout,
        sigma: f64,
        goal: &GoalVector,
    ) -> Result<Self> {
        check_len("scaled ROM outputs", rom.n_outputs(), scaled.nrows())?;
        check_len("scaled ROM rank", rom.rank(), scaled.ncols())?;
        let mut rows = DMatrix::zeros(select.len(), rom.rank());
        for (i, &j) in select.iter().enumerate() {
            if j >= scaled.nrows() {
                return Err(Error::InvalidArgument(format!(
                    "ROM output {j} of {}",
                    scaled.nrows()
                )));
            }
            rows.row_mut(i).copy_from(&scaled.row(j));
        }
        Self::from_rows(rom, rows, layout, sigma, goal)
    }

    fn from_rows(
        rom: &RomOperator,
        rows: DMatrix<f64>,
        layout: WeightLayout,
        sigma: f64,
        goal: &GoalVector,
    ) -> Result<Self> {
        if !rom.is_preconditioned() {
            return Err(Error::Contract(
                "the reduced design objective needs a prior-preconditioned ROM".into(),
            ));
        }
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("noise sigma must be positive, got {sigma}")));
        }
        check_len("ROM outputs vs layout", layout.n_measurements(), rows.nrows())?;
        check_len("goal vector", rom.n_dof(), goal.c.len())?;
        let prior = rom.prior().clone();
        let area = prior.area();
        let z = prior.solve_a(&goal.c.iter().map(|v| v * area).collect::<Vec<_>>());
        let prior_value = area * z.iter().map(|v| v * v).sum::<f64>();
        let g = rom.u().transpose() * DVector::from_vec(z) * area;
        let r = rom.rank();
        let s2 = 1.0 / (sigma * sigma);
        let mut fixed_t = DMatrix::zeros(r, r);
        for (j, f) in layout.fixed_measurements() {
            let a = rows.row(j);
            fixed_t += a.transpose() * a * (s2 * f);
        }
        Ok(Self {
            rows,
            u: rom.u().clone(),
            layout,
            sigma,
            g,
            prior_value,
            fixed_t,
            prior,
        })
    }

    /// Prior goal variance `<c, Gamma_pr c>_M`.
    pub fn prior_value(&self) -> f64 {
        self.prior_value
    }

    fn reduced_hessian(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let omega = self.layout.expand(w)?;
        let s2 = 1.0 / (self.sigma * self.sigma);
        let r = self.rows.ncols();
        let mut scaled = self.rows.clone();
        for (j, mut row) in scaled.row_iter_mut().enumerate() {
            let o = if self.layout.owner(j).is_some() { omega[j] } else { 0.0 };
            row *= (s2 * o).sqrt();
        }
        let mut t = scaled.tr_mul(&scaled) + &self.fixed_t;
        for i in 0..r {
            t[(i, i)] += 1.0;
        }
        Ok(t)
    }

    /// Low-rank posterior of the surrogate model at design `w`.
    pub fn posterior(&self, w: &[f64]) -> Result<LowRankPosterior> {
        let mut t = self.reduced_hessian(w)?;
        let r = t.nrows();
        for i in 0..r {
            t[(i, i)] -= 1.0;
        }
        let eig = nalgebra::SymmetricEigen::new((&t + t.transpose()) * 0.5);
        let mut order: Vec<usize> = (0..r).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let keep: Vec<usize> = order
            .into_iter()
            .filter(|&i| eig.eigenvalues[i] >= DEFAULT_EIGEN_FLOOR)
            .collect();
        let n = self.u.nrows();
        let area = self.prior.area();
        let mut v = DMatrix::zeros(n, keep.len());
        let mut values = Vec::with_capacity(keep.len());
        for (dst, &src) in keep.iter().enumerate() {
            let u_col = &self.u * eig.eigenvectors.column(src);
            let col = self.prior.solve_a(&u_col.iter().map(|x| x * area).collect::<Vec<_>>());
            v.column_mut(dst).copy_from_slice(&col);
            values.push(eig.eigenvalues[src]);
        }
        LowRankPosterior::new(self.prior.clone(), values, v, w.to_vec())
    }
}

impl DesignObjective for RomObjective {
    fn q(&self) -> usize {
        self.layout.q()
    }

    fn label(&self) -> &'static str {
        "rom"
    }

    fn data_term(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let t = self.reduced_hessian(w)?;
        let chol = t
            .cholesky()
            .ok_or_else(|| Error::Contract("reduced Hessian is not positive definite".into()))?;
        let y = chol.solve(&self.g);
        let value = self.prior_value - self.g.dot(&self.g) + self.g.dot(&y);
        let fq = &self.rows * &y;
        let s2 = 1.0 / (self.sigma * self.sigma);
        let per: Vec<f64> = fq.iter().map(|v| -s2 * v * v).collect();
        Ok((value, self.layout.reduce(&per)?))
    }
}

/// Design CSV with header `index,x,y,weight,selected`.
pub fn write_design_csv<W: Write>(
    mut out: W,
    positions: &[(f64, f64)],
    w: &[f64],
    threshold: f64,
) -> Result<()> {
    check_len("design positions", w.len(), positions.len())?;
    writeln!(out, "index,x,y,weight,selected")?;
    for (i, (&(x, y), &wi)) in positions.iter().zip(w).enumerate() {
        writeln!(out, "{i},{x},{y},{wi:e},{}", u8::from(wi >= threshold))?;
    }
    Ok(())
}
