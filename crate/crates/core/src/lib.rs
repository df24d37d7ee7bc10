pub mod archive;
pub mod autograd;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod gradcheck;
pub mod inference;
pub mod kernels;
pub mod losses;
pub mod noise_models;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
