//! Distributed stability certification of interconnected LTI agents via
//! QSR-dissipativity and the network dissipativity theorem.

pub mod admm;
pub mod app;
pub mod chordal;
pub mod dissipativity;
pub mod error;
pub mod linalg;
pub mod model;
pub mod projections;
pub mod stability;

pub use error::{Error, Result};
