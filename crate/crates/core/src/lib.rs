//! Symmetric (SPME) and antisymmetric (APME) Pauli master equations for a
//! finite quantum system made of matter states `+1..+n` and antimatter
//! states `-1..-n`.
//!
//! The crate is organised bottom-up:
//!
//! - [`system`]: Hamiltonian data (`H = H0 + λV`), signed state indices,
//!   CP/CPT constraints and random fixtures.
//! - [`unitary`]: finite-interval propagators, exact and second-order Dyson.
//! - [`kinetics`]: kinetic coefficients and the SPME/APME generators.
//! - [`solver`]: RK4 integration with boundary-of-time events, entropy,
//!   energy and the two-state closed forms.
//! - [`microsim`]: the decoherence-cycle simulation used as an independent
//!   oracle for both master equations.
//! - [`io`], [`scenario`], [`cli`]: file formats and the `pme` command line.

pub mod cli;
pub mod io;
pub mod kinetics;
pub mod microsim;
pub mod scenario;
pub mod solver;
pub mod system;
pub mod unitary;

pub use num_complex::Complex64;

/// Dense complex matrix used for Hamiltonians and propagators.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Dense complex vector (wave functions).
pub type CVector = nalgebra::DVector<Complex64>;
/// Dense real matrix (rates, generators).
pub type RMatrix = nalgebra::DMatrix<f64>;
/// Dense real vector (probabilities).
pub type RVector = nalgebra::DVector<f64>;

pub use kinetics::{GeneratorMatrix, KineticMatrix, RateMode, Variant};
pub use solver::{ProbabilityState, TimeBoundaryEvent, Trajectory};
pub use system::{StateIndex, SymmetryClass, SystemSpec};
pub use unitary::{EvolutionOperator, PropagatorMode};
