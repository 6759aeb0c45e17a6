//! Bayesian human motion prediction and prediction-aware robot planning.
//!
//! Humans are modeled as noisy-rational agents with unknown goal and
//! rationality. Observed motion updates a joint belief over those
//! hypotheses; sampled particles roll the belief forward into a stack of
//! occupancy grids, which the planners treat as time-varying obstacles.

pub mod agent_models;
pub mod belief;
pub mod error;
pub mod exec;
pub mod occupancy;
pub mod planners;
pub mod predictor;
pub mod rng;
pub mod stack_io;
pub mod sim;
