//! Tube-based robust nonlinear MPC for an underactuated underwater vehicle
//! tracking a trajectory among spherical obstacles under bounded currents.
//!
//! The crate is organised bottom-up: [`geometry`] and [`vehicle`] describe
//! the world and the plant, [`errorframe`] maps the plant into tracking-error
//! coordinates, [`tube`] certifies the ancillary feedback and tightens the
//! constraint sets, [`fhocp`] solves the finite-horizon problem, and
//! [`controller`] closes the loop. [`sim`] drives whole scenarios.

// `!(x > 0.0)` and friends are used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod controller;
pub mod error;
pub mod errorframe;
pub mod fhocp;
pub mod geometry;
pub mod output;
pub mod qp;
pub mod scenario;
pub mod sim;
pub mod tube;
pub mod vehicle;

pub use error::{Error, Result};
pub use errorframe::{ErrorConstraintSet, ErrorState, ReferenceTrajectory};
pub use geometry::{KnownWorld, Obstacle, Workspace};
pub use scenario::Scenario;
pub use sim::{run_scenario, LogRecord, SimLog};
pub use vehicle::{BodyVelocity, CurrentModel, DisturbanceModel, SwayModel, VehicleState, VelocityBox};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
