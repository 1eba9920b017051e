//! Early prediction of rule-defined severe sepsis from hospital encounter
//! streams.
//!
//! The pipeline labels each encounter by scanning its measurements for
//! co-occurring inflammatory-response and organ-dysfunction criteria (or a
//! qualifying discharge code), anchors positives at that onset time and
//! negatives at a seeded random time, truncates every event stream to a
//! prediction horizon before the anchor, featurizes the surviving window
//! as summed word embeddings and per-variable measurement rollups, fits a
//! ridge regressor, and reports discrimination (AUC) plus top-fraction
//! capture. Seeded end to end: identical inputs reproduce identical
//! artifacts.
//!
//! Entry points: [`config::load_config`] then [`pipeline::run`], or the
//! individual stages in [`cohort`], [`label`], [`window`], [`text`],
//! [`structured`], [`ridge`], [`eval`], and [`audit`]. [`synth`] generates
//! seeded cohorts with known ground truth for testing and benchmarks.

pub mod audit;
pub mod cohort;
pub mod config;
pub mod eval;
pub mod label;
pub mod pipeline;
pub mod ridge;
pub mod structured;
pub mod synth;
pub mod text;
pub mod timestamps;
pub mod window;

pub use cohort::{load_cohort, Cohort, Encounter};
pub use config::{load_config, LoadedConfig, PipelineConfig};
pub use label::{label_cohort, LabelOutcome, RuleSpec};
pub use pipeline::{run, PipelineError, RunOptions, RunSummary};
pub use window::{assemble_dataset, ModalityRequirement, ModelingDataset};
