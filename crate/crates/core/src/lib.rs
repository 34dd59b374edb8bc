//! Fuel-optimal powered descent guidance on airless bodies.
//!
//! The indirect-method boundary value problem is discretized with
//! constrained expressions that embed the endpoint and junction states
//! exactly, solved by Gauss–Newton at fixed switching times, and wrapped in
//! a root-finding loop over the switching and final times.

// `!(x > y)` checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cli;
pub mod config;
pub mod error;
pub mod inner;
pub mod io;
pub mod jacobian;
pub mod mass_costate;
pub mod model;
pub mod outer;
pub mod tfc;
pub mod validation;

pub use error::{GuidanceError, Result};
