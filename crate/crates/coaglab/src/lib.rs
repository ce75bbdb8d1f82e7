//! Numerical laboratory for multicomponent coagulation equations.
//!
//! The crate simulates the discrete binary-coagulation system on the
//! composition lattice, provides a stochastic particle oracle for
//! cross-checking the deterministic solver, and computes the localization
//! and self-similar-scaling diagnostics used to study mass concentration
//! along rays of composition space.
//!
//! The numerical core is generic over the floating-point scalar via
//! [`real::Real`]; the CLI and the on-disk formats use `f64`.

pub mod config;
pub mod diagnostics;
pub mod io;
pub mod kernel;
pub mod lattice;
pub mod real;
pub mod report;
pub mod selfsimilar;
pub mod solver;
pub mod ssa;

pub use kernel::{KernelFamily, KernelParams, KernelSpec, QForm};
pub use lattice::{Composition, LatticeState};
pub use real::Real;
pub use solver::{SolverConfig, Trajectory};

/// Concrete aliases for the default `f64` scalar used by the CLI.
pub type KernelSpec64 = KernelSpec<f64>;
pub type LatticeState64 = LatticeState<f64>;
pub type QForm64 = QForm<f64>;
