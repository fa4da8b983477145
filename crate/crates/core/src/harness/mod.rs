//! Evaluation metrics, the synthetic benchmark, run configuration, training
//! stages and the evaluations shared by the command line and the acceptance suite.

mod benchmark;
mod config;
mod dataset;
mod eval;
mod metrics;
mod pipeline;
mod report;

use thiserror::Error;

pub use benchmark::{
    build_benchmark, build_benchmark_sized, item_seed, manifest, render_entry, Benchmark, BenchmarkSizes, Bundle,
    ManifestEntry,
};
pub use config::{CodecSection, EvalSection, ExperimentConfig};
pub use dataset::{entry_path, read_bundle, read_manifest, write_dataset, MANIFEST_FILE};
pub use eval::{composition_locality, conditional_accuracy, control_adherence, edit_retrieval, scale_ablation};
pub use metrics::{
    feature_frechet, mpjpe, mpjpe_window, retrieval, trajectory_error, FeatureScaler, FeatureVector, NearestCentroid,
    RetrievalReport, FEATURE_VECTOR_DIM, FRECHET_EPS,
};
pub use pipeline::{edit_dataset, generator_dataset, train_codec_stage, train_edit_stage, train_generator_stage};
pub use report::{fingerprint, EvalReport};

use crate::codec::CodecError;
use crate::generator::GeneratorError;
use crate::motiondata::MotionError;
use crate::tasks::TaskError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("input not found: {0}")]
    NotFound(String),
    #[error("{path}: {message}")]
    File {
        path: String,
        code: &'static str,
        message: String,
    },
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Task(#[from] TaskError),
}
