//! Singular semilinear solver: source library with declared envelopes,
//! clamp-regularized continuation, and the diagnostic operations that check
//! the solution estimates on discrete states.

mod diagnostics;
mod solver;
mod source;

pub use diagnostics::{
    apriori_profile, apriori_profile_ok, energy_equality_residual, uniqueness_probe, zdelta_mass,
    AprioriRow,
};
pub use solver::{lumped_masses, solve_semilinear, DeltaRecord, SolveTrace, SolverParams};
pub use source::{make_source, GammaCurve, SingularSource, SourceSpec};
