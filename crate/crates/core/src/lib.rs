//! Compressed convolutional-transformer student for extractive question
//! answering, trained by layer-wise knowledge distillation from a
//! full-resolution teacher.

pub mod bench;
pub mod corpus;
pub mod distill;
pub mod error;
pub mod kv;
pub mod model;
pub mod pipeline;
pub mod teacher;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
