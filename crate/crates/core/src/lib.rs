//! Two-stage zonal Volt/VAR control for unbalanced radial distribution feeders.
//!
//! The offline stage computes reactive-power voltage sensitivities, clusters
//! load nodes into weakly coupled inverter zones and picks a handful of
//! critical nodes per zone by Monte-Carlo screening. The online stage runs a
//! priority-list inverter dispatcher every `t` minutes and a regulator
//! setpoint tuner every `T` minutes on top of unmodified deadband/time-delay
//! tap changers, inside a quasi-static time-series simulator.

// `!(a < b)` comparisons are deliberate: they reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod artifacts;
pub mod critical;
pub mod error;
pub mod feeder;
pub mod fixtures;
pub mod ibr;
pub mod phase;
pub mod powerflow;
pub mod profiles;
pub mod scenario;
pub mod sensitivity;
pub mod sim;
pub mod vr;
pub mod zoning;

pub use error::{Error, ErrorClass, Result};
pub use feeder::{parse_feeder, FeederModel, Node};
pub use phase::{Phase, PhaseSet};
