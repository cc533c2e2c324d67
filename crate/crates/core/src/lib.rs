//! Conditional-diffusion multimodal trajectory prediction over whole traffic
//! scenes, with exact Shapley attribution over four input feature groups.

pub mod autodiff;
pub mod decoder;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod explain;
pub mod features;
pub mod fsutil;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scene;
pub mod seeding;
pub mod trainer;

pub use error::{Error, Result};
