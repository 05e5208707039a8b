//! Dose finding for drug-combination Phase I trials with partial orderings.
//!
//! The crate covers the whole pipeline: the dose grid and its candidate
//! orderings ([`orderings`]), posterior inference under the power working
//! model with ordering selection or model averaging ([`inference`]),
//! estimation/escalation coherency auditing ([`coherency`]), single-trial
//! conduct ([`engine`]), replicated operating-characteristic studies
//! ([`simulator`]) and fixed-response case-study replay ([`case_study`]).

pub mod case_study;
pub mod coherency;
pub mod engine;
pub mod inference;
pub mod orderings;
pub mod simulator;

pub use engine::{Design, DesignConfig, SkeletonSpec, Trial, TrialRecord};
pub use inference::{EstimateSnapshot, Method, PosteriorModel, PriorSpec, Skeleton, TrialState};
pub use orderings::{Dose, DoseGrid, OrderingSet, SimpleOrdering, ToxicitySets};
