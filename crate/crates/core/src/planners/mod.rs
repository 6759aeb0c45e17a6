//! Robot planners consuming prediction stacks: a time-varying ANA* global
//! planner with a path tracker, and an MPPI local controller.

mod ana_star;
mod mppi;
mod tracker;

use serde::{Deserialize, Serialize};

pub use ana_star::{ana_star, AnaStarConfig, PlanResult, PlanStatus, TimeGrid};
pub use mppi::{
    mppi_cost, mppi_rollouts, mppi_step, mppi_weights, sequence_cost, shift_nominal, CostMap, MppiConfig,
    MppiDiagnostics, MppiOutput, Rollout,
};
pub use tracker::{track_path, TrackerGains};

/// Position at an absolute time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

/// Time-indexed path with strictly increasing waypoint times.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub waypoints: Vec<Waypoint>,
}

impl Path {
    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn last(&self) -> Option<&Waypoint> {
        self.waypoints.last()
    }
}
