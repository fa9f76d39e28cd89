//! Discretization-agnostic linear algebra: sparse operators, matrix-free
//! linear maps, conjugate gradients, banded direct factorizations and
//! randomized low-rank factorizations.

mod banded;
mod cg;
mod linear_map;
pub mod parallel;
mod randomized;
mod sparse;
pub mod vec;

pub use banded::BandedLu;
pub use cg::{cg_solve, cg_solve_from, CgSolution};
pub use linear_map::{probe_linearity, DenseMap, FnMap, LinearMap};
pub use randomized::{
    gaussian_matrix, randomized_gen_eig, randomized_svd, EigenPairs, RandomizedOptions,
    TruncatedSvd,
};
pub use sparse::SparseOperator;
