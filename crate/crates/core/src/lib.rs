//! Virtual decomposition control of open-chain manipulators with
//! decentralized velocity observers.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod controller;
pub mod error;
pub mod observer;
pub mod sim;
pub mod spatial;
pub mod stability;

pub use error::{Error, Result};
