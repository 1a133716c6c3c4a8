//! Two-party private inference for networks whose activations are
//! normalized Hermite polynomial expansions (HerPN blocks).

pub mod beaver;
pub mod cost;
pub mod field;
pub mod hermite;
pub mod herpn;
pub mod meter;
pub mod nn;
pub mod norm;
pub mod protocol;
pub mod quadrature;
pub mod sharing;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod wire;
