//! Pulse synthesis and simulation for single-control multi-target
//! C(Z^⊗N) gates on neutral-atom arrays with an asymmetric Rydberg
//! blockade.
//!
//! The crate is organized around the experiment pipeline:
//!
//! - [`geometry`]: atom layouts (control at the center, targets on a
//!   circle), van-der-Waals interaction matrices, and Gaussian position
//!   noise sampling.
//! - [`pulse`]: piecewise-constant drive schedules with learnable phases
//!   and a fixed amplitude envelope with Gaussian ramp edges.
//! - [`dynamics`]: the three-level multi-atom Hamiltonian, exact segment
//!   propagators, the Rydberg-decay Kraus channel, and density-matrix
//!   evolution.
//! - [`engine`]: a fast evolution backend used by training and batched
//!   evaluation (pure-vector propagation plus a first-order decay-history
//!   expansion).
//! - [`objective`]: the gate target, input-state set, fidelity, the
//!   smoothness penalty, and the total training loss.
//! - [`optimizer`]: Adam-based phase-profile training with annealed
//!   smoothness coefficients and multi-restart search.
//! - [`analysis`]: Pauli Transfer Map diagnostics and duration/radius
//!   fidelity sweeps.
//!
//! Internal units are μm, μs, and rad/μs throughout; user-facing
//! configuration uses 2π×MHz, ns, and μm with conversion at the boundary
//! (see [`units`]).

pub mod analysis;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod hilbert;
pub mod noise;
pub mod objective;
pub mod optimizer;
pub mod parallel;
pub mod problem;
pub mod pulse;
pub mod units;

pub use error::{Error, Result};
