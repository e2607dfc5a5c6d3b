//! Guaranteed-sound interval iteration for reachability probabilities in
//! Markov decision processes.
//!
//! Every arithmetic operation of the iteration is rounded in the direction
//! that keeps the lower bound below and the upper bound above the exact
//! probability, so the returned interval is correct despite floating-point
//! arithmetic.

pub mod bench;
pub mod graph;
pub mod hexfloat;
pub mod iteration;
pub mod model;
pub mod oracle;
pub mod pctl;
pub mod rounding;

pub use graph::{collapse_mecs, mec_decomposition, prob0, prob1, MecPartition, QualitativeSets};
pub use iteration::{
    solve, solve_observed, SolveConfig, SolveError, SolveResult, Termination, ValueVectors, Variant,
};
pub use model::{
    build_counterexample, parse_model, serialize_model, validate, Mdp, ModelError, Opt, Rational,
    StateSet,
};
pub use oracle::{exact_dtmc_reachability, exact_reachability, ExactResult, OracleError};
pub use pctl::{evaluate, opt_for, Comparator, Property, PropertyError, Query, Verdict};
pub use rounding::{rational_to_float, Direction, Precision, RoundingControl, Strategy};
