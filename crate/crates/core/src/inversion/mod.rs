//! Design-weighted Bayesian inversion: Hessian actions, MAP estimation,
//! the low-rank posterior and pointwise variance.

mod design;
mod lowrank;
mod problem;

pub use design::{DesignWeights, WeightLayout};
pub use lowrank::{LowRankPosterior, VarianceEstimate, DEFAULT_EIGEN_FLOOR};
pub use problem::{InverseProblem, MapSolution, SharedMap};

/// Row-major `n x k` buffer of the columns of `x`.
pub(crate) fn to_row_major(x: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    x.transpose().as_slice().to_vec()
}
