//! Multi-label active learning from crowds.
//!
//! A per-label crowd model couples a logistic classifier for the latent true
//! label with instance-dependent logistic expertise models for each
//! annotator, and is fit by EM. Instances are represented either by their
//! raw features or enhanced with a kNN label code computed from the initial
//! labeled set. An active loop chooses one (instance, label, annotator)
//! query at a time; a simulator reproduces a clustered-expertise crowd for
//! benchmarking, and [`eval`] turns runs into learning curves.

pub mod active;
pub mod dataset;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod linear;
pub mod model;
pub mod par;
pub mod sim;

pub use active::{
    run_strategy, ActiveSession, Annotation, AnnotationChannel, Method, QueryTriple, RunOutput, RunSettings,
    ScriptedChannel, SessionError,
};
pub use dataset::{AnnotationStore, Bipolar, DataSplit, Dataset, DatasetFormat, SplitFractions};
pub use error::{Error, Result};
pub use eval::{micro_f1, run_benchmark, BenchmarkConfig, BenchmarkReport, LearningCurve};
pub use model::{CrowdModel, FeatureTable, Representation};
pub use par::ExecMode;
pub use sim::{build_simulators, CrowdSimulator};
