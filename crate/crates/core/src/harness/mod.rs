//! Experiment orchestration: configuration, synthetic data, manifest
//! ingestion, multi-seed runs, the subspace-dimension sweep and the
//! loss-head comparison.

pub mod config;
pub mod experiment;
pub mod manifest;
pub mod synthetic;

pub use config::{DatasetSource, ExperimentConfig};
pub use experiment::{
    compare, load_dataset, mean_std, run_experiment, run_trial, score_test_split, sweep_subspace_dim, train_system,
    ComparisonRow, ExperimentReport, TrainedSystem, TrialOutcome,
};
pub use manifest::{read_manifest, write_manifest, Dataset, ManifestRow, Sample};
pub use synthetic::{generate, write_dataset, SyntheticData, SyntheticSpec};
