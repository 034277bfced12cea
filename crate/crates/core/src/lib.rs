//! Protective measurement simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod evolution;
pub mod hilbert;
pub mod joint;
pub(crate) mod linalg;
pub mod pm;
pub mod protection;
pub mod reconstruction;
