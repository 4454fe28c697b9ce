//! Open quantum battery: a cavity charger coupled to `N` two-level holders,
//! charged through a lossy channel.

pub mod cli;
pub mod error;
pub mod evolve;
pub mod experiment;
pub mod hilbert;
pub mod merit;
pub mod model;
pub mod ode;

pub use error::{Error, Result};
