//! Personalized activity recommendations for better sleep, from actigraphy.
//!
//! The pipeline turns per-epoch activity counts into complete days, clusters
//! each subject's days into behavior modes, mines good-sleep activity recipes
//! inside each mode, and at any minute of a new day recommends the remaining
//! light, moderate and vigorous minutes.
//!
//! ```
//! use paris::pipeline::{run_pipeline, PipelineConfig};
//! use paris::synth::{generate_cohort, CohortSpec};
//!
//! let cohort = generate_cohort(&CohortSpec { n_subjects: 2, ..Default::default() }).unwrap();
//! let out = run_pipeline(
//!     cohort.epochs_csv.as_slice(),
//!     cohort.metadata_csv.as_slice(),
//!     &PipelineConfig::default(),
//! )
//! .unwrap();
//! assert_eq!(out.bundle.subjects["S001"].modes.k, 2);
//! ```

pub mod cluster;
pub mod ingest;
pub mod metrics;
pub mod modes;
pub mod pipeline;
pub mod recipes;
pub mod recommend;
pub mod report;
pub mod synth;
pub mod types;

pub use cluster::{kmeans_fit, silhouette, ClusterModel, KMeansConfig};
pub use ingest::CutPoints;
pub use metrics::{Metric, MetricId};
pub use modes::{fit_behavior_modes, BehaviorModeModel, Domain, ModeFitConfig};
pub use pipeline::{evaluate_cohort, run_pipeline, EvalConfig, ModelBundle, PipelineConfig};
pub use recipes::{extract_recipes, Recipe, RecipeBook, RecipeConfig};
pub use recommend::{recommend, ConstraintRule, PartialDay, Recommendation};
pub use types::{ActigraphyDay, ActivityLevel, EpochRecord, SleepQuality, SubjectMetadata};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/modes.md")]
    mod modes {}
    #[doc = include_str!("../../../book/src/recipes.md")]
    mod recipes {}
    #[doc = include_str!("../../../book/src/recommend.md")]
    mod recommend {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/interfaces.md")]
    mod interfaces {}
}
