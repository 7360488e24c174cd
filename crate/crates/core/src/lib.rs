//! Event-capturing time stepping for mechanical systems subject to finitely
//! many (possibly time-dependent) unilateral constraints `g_i(t, q) >= 0`.
//!
//! Each step predicts a velocity `u + h M^-1 f`, projects it (in the mass
//! metric) onto the first-order admissible set
//! `K_h(t, q) = { u : g_i(t, q) + h <grad g_i(t, q), u> >= 0 }` and advances
//! the configuration with the corrected velocity. The projection multipliers
//! give the contact impulses.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
// NaN-rejecting checks are written as `!(x > 0.0)` on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod analysis;
pub mod constraints;
mod error;
pub mod linalg;
pub mod particles;
pub mod projection;
pub mod scheme;

pub use crate::error::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = core::result::Result<T, E>;
