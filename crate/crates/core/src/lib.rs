mod error;
pub mod cli;
pub mod forms;
pub mod kernels;
pub mod montecarlo;
pub mod powers;
pub mod quadrature;
pub mod schrodinger;
pub mod specfun;
pub mod testfun;

pub use error::{Error, Result};
