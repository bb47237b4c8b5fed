//! Training loops: layer-by-layer distillation of the student, supervised
//! teacher training, the ablation driver and evaluation helpers.

pub mod ablation;
pub mod adam;
pub mod batches;
pub mod config;
pub mod distil;
pub mod eval;
pub mod teacher;

pub use ablation::{mode_training_set, run_ablation, AblationInputs, AblationRow};
pub use adam::Adam;
pub use config::{Schedule, TrainConfig};
pub use distil::{read_metrics, RunOptions, Trainer, CHECKPOINT_DIR, DIVERGENCE_FILE, METRICS_FILE, STUDENT_DIR};
pub use eval::{evaluate_student, evaluate_teacher, predict_student, predict_teacher, DecodeOptions};
pub use teacher::{train_teacher, TeacherTrainConfig};
