//! # fwdreg
//!
//! Robust output regulation of semilinear contraction systems by forwarding.
//!
//! The crate works with a finite-dimensional (discretized) plant
//!
//! ```text
//! dw/dt + A w + F(w) = B u + d,      y = C w,
//! dz/dt = C w - y_ref,
//! ```
//!
//! where `A + F` is strongly monotone in a weighted inner product. It builds
//! the forwarding map
//!
//! ```text
//! M(w) = -C A^{-1} ( w - ∫_0^∞ F(T_t w) dt )
//! ```
//!
//! together with its differential and the adjoint action `B* dM(w)*`, closes
//! the loop with `u = B* dM(w)* (z - M(w))`, simulates it, and runs a battery
//! of numerical checks on every hypothesis and conclusion that can be tested
//! at desk scale.
//!
//! Modules, bottom-up:
//!
//! * [`space`]: weighted inner-product spaces, linear maps, adjoints, norms.
//! * [`evolution`]: the plant, IMEX time stepping, tangent and adjoint flows.
//! * [`forwarding`]: the forwarding map, its differential, controller gains.
//! * [`regulator`]: feedback, closed-loop simulation, equilibria, reports.
//! * [`plants`]: linear benchmark, damped sine-Gordon, Wilson-Cowan field.
//! * [`verify`]: dense oracles, finite-difference and refinement checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evolution;
pub mod forwarding;
pub mod linalg;
pub mod plants;
pub mod regulator;
pub mod space;
pub mod verify;

pub use error::{Error, Result};
pub use evolution::{Forcing, ImexStepper, Nonlinearity, Plant, PlantParts, Trajectory};
pub use forwarding::{ForwardingConfig, ForwardingMap, Gains};
pub use regulator::{ClosedLoopState, FeedbackScheme, RegulationReport, Scenario, SimulationRun};
pub use space::{LinMap, SpaceLabel, SpaceSpec};

pub use nalgebra;

/// Column vector type used throughout.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix type used throughout.
pub type Matrix = nalgebra::DMatrix<f64>;
