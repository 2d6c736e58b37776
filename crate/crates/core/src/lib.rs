//! Class-aware weighted-voting ensembles for extractive question answering.
//!
//! The pipeline works on per-model answer files:
//!
//! 1. [`corpus`] loads SQuAD v1.1 datasets and prediction files and carves a
//!    pre-evaluation slice out of a training set.
//! 2. [`taxonomy`] assigns every question to one of fourteen phrase classes.
//! 3. [`metrics`] scores predictions (EM and token F1) per class.
//! 4. [`weighting`] turns pre-evaluation reports into per-class weights.
//! 5. [`voting`] combines the models' answers with those weights.
//! 6. [`analysis`] measures how often two models agree.
//!
//! [`synth`] generates corpora and prediction files with known accuracy
//! profiles for testing the pipeline without trained models.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod synth;
pub mod taxonomy;
pub mod voting;
pub mod weighting;

pub use analysis::{export_breakdown, pairwise_similarity, Breakdown, SimilarityReport};
pub use corpus::{load_dataset, load_predictions, split_pre_eval, Dataset, Granularity, PredictionSet, QaItem, SplitResult};
pub use error::{Error, Result};
pub use metrics::{em, evaluate, normalize_answer, token_f1, EvalReport, MissingPolicy};
pub use taxonomy::{classify, classify_by_length, class_distribution, Category, ClassRuleSet, Classifier, QuestionClass};
pub use voting::{run_ensemble, vote, Candidate, Combine, DuplicateEquality, VoteConfig, VoteMode, VoteTrace};
pub use weighting::{compute_class_weights, compute_global_weights, MetricBasis, WeightTable};
