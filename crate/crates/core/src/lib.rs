//! Robust estimation and composite hypothesis testing with the S-divergence family.
//!
//! The crate covers minimum-divergence fitting (unrestricted and under
//! restrictions `h(θ) = 0`), the divergence test statistic with its weighted
//! chi-square limiting law, power approximations and influence diagnostics.

pub mod asymptotics;
pub mod density;
pub mod divergence;
pub mod estimation;
pub mod error;
pub mod model;
pub mod optim;
pub mod quadrature;
pub mod robustness;
pub mod testing;

pub use error::{Result, SdtError};
