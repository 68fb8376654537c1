//! Hierarchical classification of vulnerability descriptions (CVE) into
//! weakness classes (CWE): text preprocessing, n-gram features, TF-IDF
//! initialized per-node classifiers, top-down inference, evaluation and
//! model persistence.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what persisted models use.

pub mod error;
pub mod eval;
pub mod features;
pub mod fingerprint;
pub mod hierarchy;
pub mod ingest;
pub mod matrix;
pub mod modelstore;
pub mod netcore;
pub mod scalar;
pub mod scoring;
pub mod synth;
pub mod textprep;

pub use error::{Error, Result};
pub use eval::{EvalReport, EvalSummary, Grain};
pub use features::{Dictionary, FeatureVector};
pub use hierarchy::{
    train_flat_baseline, train_hierarchy, train_model, train_two_layer_baseline, ModelKind, PipelineConfig,
    Prediction, SelectionMode, WeightInit,
};
pub use ingest::{CveRecord, CweId, CweNode, NodeId, Taxonomy};
pub use netcore::TrainConfig;
pub use scalar::Scalar;
pub use textprep::{Preprocessor, Stopwords, SynonymTable};

pub type Model = hierarchy::HierarchicalModel<f64>;
pub type Model32 = hierarchy::HierarchicalModel<f32>;
pub type Classifier = netcore::NodeClassifier<f64>;
pub type WeightMatrix = matrix::Matrix<f64>;
