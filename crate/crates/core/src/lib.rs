//! MNIST-1D: a procedurally generated 1-D digit benchmark, a small
//! higher-order autodiff engine, the four benchmark model families, and
//! reproducible experiment drivers built on them.

pub mod array;
pub mod autodiff;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod models;
pub mod rng;
pub mod training;

pub use array::Array;
pub use error::{Error, Result};
