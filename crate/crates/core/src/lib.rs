//! Gradient surgery for fine-tuning a feature encoder against a frozen
//! teacher.

pub mod checkpoint;
pub mod datasets;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod grad;
pub mod gradcheck;
pub mod metrics;
pub mod numerics;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use datasets::{DatasetSplit, FeatureRecord, SyntheticSpec};
pub use encoders::{FrozenHead, LinearHead, LowRankAdapter, MlpEncoder, SemanticMap, StudentEncoder, TeacherEncoder};
pub use error::{Error, Result};
pub use experiment::{DataMode, ExperimentConfig, RunOutcome, RunReport};
pub use grad::{GradientTriple, HalfSpaceDecomposition, Label, SurgeryMode, SurgeryOutput};
pub use metrics::{DriftReport, EvalReport};
pub use numerics::{Mat64, Rng, Vec64};
pub use trainer::{Models, OptimizerKind, OptimizerState, RunHistory, SurgeryConfig};
