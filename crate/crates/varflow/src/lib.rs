//! Numerical laboratory for incompressible flow of fluids whose stress
//! exponent varies in space and jumps in time.

pub mod checkpoint;
pub mod covering;
pub mod energy;
pub mod exponent;
pub mod grid;
pub mod korn;
pub mod mac;
pub mod mollifier;
pub mod musielak;
pub mod pressure;
pub mod quad;
pub mod solver;
pub mod spectral;
pub mod stress;
pub mod sweep;
pub mod tensor;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
