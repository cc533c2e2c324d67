//! Minimal reverse-mode differentiation in double precision.
//!
//! Values live on a [`Tape`]; operations append nodes and `backward`
//! replays them in reverse. Model parameters are kept in a [`ParamSet`]
//! and bound onto a tape through a [`Session`].

mod gradcheck;
mod params;
pub mod spline;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params};
pub use params::{ParamId, ParamSet, Session};
pub use spline::SplineGrid;
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
