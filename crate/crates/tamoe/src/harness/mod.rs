//! Data ingestion, split construction, synthetic dataset generation, and
//! experiment orchestration.

pub mod config;
pub mod data;
pub mod experiment;
pub mod synthetic;

pub use data::{
    build_split, read_features, subsample_features, write_features, DatasetManifest,
    ManifestRecord, Split,
};
pub use config::ExperimentConfig;
pub use experiment::{prepare, run_experiment, ExperimentReport};
pub use synthetic::{gen_synthetic, SyntheticSpec};
