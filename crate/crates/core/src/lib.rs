//! Dynamic prediction of the probability of remaining recurrent-event-free
//! over a follow-up window.
//!
//! The pipeline converts recurrent-event records into a censored
//! longitudinal data set ([`window`]), turns each window's residual times
//! into jackknife pseudo-observations of the Kaplan-Meier event-free
//! probability ([`pseudo`]), and regresses them on covariates with either a
//! subject-bootstrapped random forest ([`forest`]) or a logit-link
//! pseudo-value regression ([`glm`]). [`evaluation`] scores predictions with
//! Harrell's C and [`simulation`] drives the generative study design.

pub mod error;
pub mod evaluation;
pub mod event_data;
pub mod forest;
pub mod glm;
pub mod importance;
pub mod pseudo;
pub mod rng;
pub mod simulation;
pub mod window;

pub use error::{Error, Result};
pub use evaluation::{bootstrap_se, harrell_c, rubin_combine, PairScope, PooledEstimate, ScoredRow};
pub use event_data::{
    parse_covariates, parse_events, validate_dataset, CovariateKind, CovariatePanel, CovariateSchema, SubjectRecord,
    ValidationReport,
};
pub use forest::{Forest, ForestConfig, TrainingSet};
pub use glm::{fit_pseudo_logit, GlmFit, GlmOptions, WaldRow};
pub use importance::{
    importance_report, permutation_importance, ImportanceOptions, ImportanceReport, VariableImportance, ZScale,
};
pub use pseudo::{build_pseudo_dataset, km_survival, pseudo_values, PseudoDataset, PseudoRow};
pub use window::{capture_rate, checkin_times, transform, LongitudinalRow, WindowGrid};
