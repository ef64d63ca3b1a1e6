//! Dataset ingestion, cached batch evaluation, reports and studies.

pub mod ablation;
pub mod cache;
pub mod config;
pub mod eval;
pub mod manifest;
pub mod report;
pub mod study;

pub use ablation::{ablation_matrix, AblationAxes, AblationCell, AblationOptions, AblationTable, CellMetrics};
pub use cache::{purge, ScoreCache};
pub use config::HarnessConfig;
pub use eval::{
    eval_dataset, paired_benchmark_compare, score_records, tune_on_manifest, EvalOptions, PairedSummary,
    PreparedScorer, PromptSource,
};
pub use manifest::{ingest_manifest, ingest_manifest_with, seeded_sample, DatasetManifest, IngestOptions, Preprocess, Split, SplitFilter};
pub use report::{rank_extremes, EvalReport, Extremes, ImageScore, Quartiles, ScorerId};
pub use study::{abstract_pair_study, pair_study, StudyPair, StudyResult, Vote};
