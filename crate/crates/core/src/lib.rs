//! Visibility-aware neural radiance fields for two interacting articulated meshes.

pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod networks;
pub mod render;
pub mod scalar;
pub mod sdf;
pub mod train;
pub mod visibility;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Graph64 = autodiff::Graph<f64>;
pub type Graph32 = autodiff::Graph<f32>;
pub type ParamStore64 = autodiff::ParamStore<f64>;
pub type ParamStore32 = autodiff::ParamStore<f32>;
