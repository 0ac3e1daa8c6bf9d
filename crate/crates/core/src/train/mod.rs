//! Loss, optimiser, cross-validation and reporting.

mod adam;
mod data;
mod loss;
mod metrics;
mod split;
mod sweep;
mod trainer;

pub use adam::{Adam, AdamCfg};
pub use data::{GraphSamples, ImageSamples, Samples};
pub use loss::{shrinkage_gradient_error, shrinkage_loss, ShrinkageCfg};
pub use metrics::{linear_fit, mean, r2, r2_if_defined, sample_std, LinearFit};
pub use split::{kfold_split, Fold, FoldSplit};
pub use sweep::{timing_sweep, SweepReport, SweepRow};
pub use trainer::{
    derive_seed, evaluate_fold, train_fold, train_fold_model, train_model, train_with_split, FoldEval, EpochLog, FoldReport, MetricsReport, TargetSummary, TestPrediction,
    TrainConfig, CSV_HEADER, SPLIT_SCHEME, TISSUES,
};
