//! The compressed student network and the pieces shared with the teacher.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod control;
pub mod infer;
pub mod layers;
pub mod params;
pub mod span;
pub mod student;

pub use batch::{compress_mask, Batch};
pub use control::ControlModel;
pub use infer::{Architecture, InferenceModel};
pub use config::{ModelConfig, COMPRESSION, N_SEGMENTS};
pub use params::ParamStore;
pub use span::{predict_span, SpanConstraints};
pub use student::{StudentForwardRecord, StudentModel};
