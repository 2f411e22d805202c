//! Conditional linear-Gaussian Bayesian networks for two-visit longitudinal data.
//!
//! The pipeline runs from raw paired measurements ([`dataset`]) through a
//! difference table, descriptive correlation networks ([`corrnet`]), constrained
//! hill-climbing ([`search`]) and bootstrap model averaging ([`averaging`]) to a
//! fitted network ([`model`]) that answers observational and interventional
//! queries ([`inference`]) and is assessed by cross-validation ([`validation`]).

pub mod averaging;
pub mod corrnet;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod inference;
mod linalg;
pub mod model;
pub mod rng;
pub mod search;
pub mod synthetic;
pub mod validation;

pub use averaging::{
    arc_strengths, average, bootstrap_dags, consensus, estimate_threshold, ArcStrengthTable,
    AveragedNetwork, AveragingOptions, ThresholdRule,
};
pub use dataset::{Dataset, DeltaDataset, LongitudinalTable, ReferenceAtlas, TreatmentCoding};
pub use error::{Error, Result};
pub use graph::{default_constraints, is_acyclic, to_dot, Arc, ArcConstraints, Dag};
pub use inference::{expectation, intervene, predict_node, query, simulate, Evidence, Intervention, QueryResult};
pub use model::{bic_score, fit_parameters, log_likelihood, local_score, ClgNetwork, FitOptions};
pub use search::{best_move_oracle, hill_climb, SearchOptions, SearchTrace};
pub use validation::{cross_validate, subgroup_networks, CvOptions, CvReport, Learner};
