//! Longitudinal EHR feature representations and rare-event risk evaluation.
//!
//! The crate is organized as a per-patient data flow:
//! visit records -> interval aggregation ([`timeline`]) -> persistence fill
//! ([`timeline::apply_persistence`]) -> feature vectors and prompts
//! ([`represent`]) -> model fitting and scoring ([`pipeline`]) -> risk-tier,
//! bootstrap and subgroup evaluation ([`eval`], [`fairness`]).
//! [`catalog`] defines the feature dictionary everything else is driven by,
//! and [`synth`] generates reproducible cohorts with planted truth.

pub mod catalog;
pub mod eval;
pub mod fairness;
pub mod par;
pub mod pipeline;
pub mod represent;
pub mod rng;
pub mod synth;
pub mod timeline;
