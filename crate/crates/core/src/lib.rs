//! Two-stage deep-unrolled channel estimation for multi-frame sparse
//! angular-domain massive-MIMO channels.
//!
//! The crate covers the whole experiment loop: [`simgen`] draws channels,
//! pilots and measurements, [`threshold`] holds the row-shrinkage and
//! support-selection operators, [`estimator`] runs the baseline solver and
//! the coarse/fine nets, [`training`] fits their parameters, and [`bench`]
//! measures them.

pub mod bench;
pub mod config;
pub mod error;
pub mod estimator;
pub mod io;
pub mod linalg;
pub mod simgen;
pub mod threshold;
pub mod training;

pub use error::{Error, Result};
