// `!(x > 0.0)` is used on purpose so NaN lands in the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack_sim;
#[cfg(feature = "cli")]
pub mod cli;
pub mod grid;
pub mod linalg;
pub mod lmi;
pub mod region;
pub mod state_space;
