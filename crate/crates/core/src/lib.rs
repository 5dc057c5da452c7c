//! Numerical laboratory for the logistic equation with nonlocal dispersal,
//!
//! ```text
//! d L[theta] + theta (m - theta) = 0   on Omega,
//! ```
//!
//! where L is a symmetric-kernel dispersal operator and m a heterogeneous
//! resource.  The crate provides midpoint grids, operator assembly, the
//! principal-eigenvalue existence test, two monotone steady-state solvers,
//! population analytics across the dispersal rate, and the global-mixing
//! reduction.

pub mod analytics;
pub mod error;
pub mod grid;
pub mod mixing;
pub mod operator;
pub mod spectral;
pub mod steady;

pub use analytics::{
    build_m_epsilon, build_resource, log_spaced, population_identity_gap, scaling_experiment,
    sweep_d, sweep_states, tprime_at_zero, ResourceSpec, ScalingOptions, ScalingResult,
    SweepOutcome, SweepRecord,
};
pub use error::{Error, Result};
pub use mixing::{
    certify_unimodal, equation_residual, golden_ratio_bound, sbar_prime, solve_mean,
    theta_given_mean, MixingScenario, MixingState, SignChange, UnimodalReport,
};
pub use grid::{build_grid, Domain, Grading, Grid, GridFunction};
pub use operator::{
    assemble, assemble_from_fn, assemble_with_cap, rayleigh, unit_ball_volume, BoundaryMode,
    Kernel, NonlocalOperator, DEFAULT_DENSE_CAP, GAUSSIAN_CUTOFF_SIGMAS,
};
pub use spectral::{
    dense_spectrum_oracle, existence_gate, principal_eigenvalue, EigenResult, Existence,
    DENSE_ORACLE_CAP,
};
pub use steady::{
    energy, residual, solve, solve_fixed_point, solve_fixed_point_from_constant, solve_monotone,
    solve_monotone_traced, time_march, Method, SolverOptions, SteadyState,
};
