//! Second-order cone programs: model, interior-point solver, and the
//! SOC approximation of the exponential cone.

mod expcone;
mod ipm;
mod program;

pub use expcone::{exp_cone_rows, max_zeta_within, minimal_chain, ExpConeSlacks};
pub use ipm::{solve_socp, SolveResult, SolveStatus, SolverSettings};
pub use program::{
    Affine, ConicProgram, LinearRow, ProgramError, RotatedSocConstraint, SocConstraint, Var,
};
