pub mod ansatz;
pub mod critical_search;
pub mod error;
pub mod fit;
pub mod ground_state;
pub mod harness;
pub mod linear;
pub mod linearized_ops;
pub mod par;
pub mod potential;
pub mod reduction;
pub mod spectral;

pub use error::{Error, Result};
