//! Critical layer identification and controlled knowledge injection on a
//! from-scratch toy vision transformer, with layer-wise representation
//! diagnostics and a procedural real/fake image corpus.

pub mod backbone;
pub mod corpus;
pub mod diagnostics;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod knowledge_injector;
pub mod layer_scout;
pub mod numerics;
pub mod par;
pub mod trainer;

pub use error::{I2pError, Result};
