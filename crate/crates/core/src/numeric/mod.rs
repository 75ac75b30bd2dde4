//! Numeric substrate: kernels, parameter storage and the optimizer.

pub mod dd;
pub mod ops;
pub mod optim;
pub mod params;
