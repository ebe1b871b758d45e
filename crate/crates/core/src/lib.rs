//! Evaluation toolkit for synthetic dermoscopic images.
//!
//! * [`feature_store`]: manifests, the FVEC feature file format, and the
//!   external extractor adapter.
//! * [`frechet`]: FID and FMD.
//! * [`classifier_eval`]: confusion counts, rank AUC, and classifier
//!   comparisons from prediction files.
//! * [`rater_stats`]: rater accuracy, exact binomial tests, Cohen's kappa.
//! * [`report`]: report bundles with machine and Markdown renderings.
//! * [`fixtures`]: count-faithful reference inputs.

pub mod classifier_eval;
pub mod feature_store;
pub mod fixtures;
pub mod frechet;
pub mod rater_stats;
pub mod report;

pub use classifier_eval::{
    auc, classifier_report, compare_reports, confusion, load_predictions, ClassifierError, ClassifierReport,
    ConfusionMatrix, PredictionSet,
};
pub use feature_store::{
    load_manifest, read_featureset, run_extractor, write_featureset, ClassLabel, FeatureSet, FeatureStoreError,
    ImageRecord, Manifest, Origin,
};
pub use frechet::{fid, fmd, gaussian_stats, medoid, sqrtm_trace, FidResult, FmdResult, GaussianStats, MetricsError};
pub use rater_stats::{
    binomial_test, cohen_kappa, interpret_band, rater_outcome, AgreementBand, BinomialResult, KappaResult,
    RaterOutcome, Sided, StatsError,
};
pub use report::{report_timestamp, Cell, ReportBundle, ReportFormat, Table};
