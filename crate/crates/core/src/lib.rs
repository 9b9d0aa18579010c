//! Synthetic polycrystal volume elements, microstructure descriptors, and
//! space-filling selection of surrogate training sets.

pub mod artifact;
pub mod design;
pub mod elastic;
pub mod embed;
pub mod error;
pub mod eval;
pub mod features;
pub mod mve;
pub mod pipeline;
pub mod rng;
pub mod texture;

pub use error::{Error, Result};
