//! Numerical homogenization for weakly coupled systems of periodic
//! Hamilton-Jacobi equations in one and two space dimensions.
//!
//! The crate computes effective Hamiltonians by solving the ergodic
//! cell problem through vanishing-discount approximations, tabulates
//! them over coordinate lattices, evolves both the oscillating and the
//! homogenized initial-value problems with a monotone upwind scheme,
//! and measures the convergence of one to the other as the oscillation
//! scale shrinks.
//!
//! Modules, roughly bottom-up:
//!
//! * [`expr`]: small arithmetic expression language for coefficients
//!   and initial data.
//! * [`grids`]: flat periodic grids and multi-component fields with
//!   CSV persistence.
//! * [`hamiltonians`]: the system family H_i(x, y, r, p), its JSON
//!   document form, and the sign conditions on the coupling.
//! * [`cell`]: one ergodic cell problem per frozen (x, r, p); the
//!   discounted solves and their extrapolated limit.
//! * [`efftable`]: effective values on lattices: parallel builds,
//!   multilinear interpolation, binary persistence, and the closed
//!   forms for the coupled eikonal family.
//! * [`evolve`]: monotone evolution of oscillating and homogenized
//!   systems, a-priori bound tracking, comparison checking.
//! * [`harness`]: experiment configs, the eps-sweep convergence study,
//!   the structural property suite, plot-data emission.
//! * [`report`]: pass/fail records shared by the suite and the
//!   `hjhomog` binary.
//!
//! `examples/` holds one runnable program per capability; start with
//! `effective_hamiltonian` and `homogenization_sweep`.

pub mod cell;
pub mod efftable;
pub mod error;
pub mod evolve;
pub mod expr;
pub mod grids;
pub mod hamiltonians;
pub mod harness;
pub mod report;

pub use error::{Error, Result};
