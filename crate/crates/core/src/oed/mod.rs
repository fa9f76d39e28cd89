//! Goal-oriented (C-optimal) sensor design with an l1 penalty.

mod goal;
mod objective;
mod optimize;

pub use goal::{goal_vector_initial, goal_vector_spacetime, spacetime_integral, GoalVector};
pub use objective::{
    DesignObjective, DesignProblem, Evaluation, FullObjective, RomObjective, write_design_csv,
};
pub use optimize::{optimize_design, threshold_design, OptimizeOptions, OptimizeResult};
