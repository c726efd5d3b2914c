pub mod autodiff;
pub mod capsules;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod embeddings;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod params;
pub mod pipeline;
pub mod report;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
