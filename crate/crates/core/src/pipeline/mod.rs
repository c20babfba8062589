//! Dataset generation, cross-validation folds, training and the three
//! experiment protocols.

mod dataset;
mod experiment;
mod folds;
mod train;

pub use dataset::{
    make_dataset, simulate_pair, DatasetManifest, DatasetSpec, Pair, PhantomKind, SampleRecord, MANIFEST_FILE,
};
pub use experiment::{panel, run_experiment, ExperimentConfig, ExperimentName, ExperimentOutcome, Scale};
pub use folds::{make_cv_folds, Fold};
pub use train::{fine_tune, restore, train, Adam, LossRecord, TrainConfig, TrainLog, LOG_EVERY};
