//! Symbol-level constructive/destructive interference design and the
//! block-level benchmark.

pub mod block;
pub mod constraints;
pub mod line_search;
pub mod phase1;
pub mod sca;
pub mod subproblem;

pub use block::{block_level_design, block_sinr, BlockDesign};
pub use constraints::{
    build_ci_constraints, build_di_constraints, ci_margin, eve_channel, eve_threshold, in_destructive_region,
    ConstraintSet, DiZone, LinearRow, SymbolFrame,
};
pub use line_search::{armijo, line_search, ArmijoParams, LineSearchKind};
pub use phase1::{max_min_slack, phase1_feasible, Phase1Outcome};
pub use sca::{
    run_case, sca_design, sca_design_zones, DesignProblem, ScaOptions, SolveReport, Termination, ZoneDesigns,
};
pub use subproblem::{solve_subproblem, SubproblemSolution, SubproblemStatus};
