//! Random walks in divergence-free random environments generated by
//! weighted cycles on the discrete torus.

pub mod corrector;
pub mod env;
pub mod error;
pub mod inequality;
pub mod io;
pub mod krylov;
pub mod lab;
pub mod lattice;
pub mod qfclt;
pub mod rng;
pub mod stats;
pub mod walker;

pub use error::{Error, Result};
