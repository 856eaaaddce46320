//! First-detection statistics of a quantum walker on an infinite
//! tight-binding chain, monitored stroboscopically at one site and
//! restarted by one of three resetting protocols.

pub mod cli;
pub mod detection;
pub mod error;
pub mod fdt;
pub mod oracle;
pub mod propagation;
pub mod protocols;
pub mod specfun;

pub use error::{Error, Result};
