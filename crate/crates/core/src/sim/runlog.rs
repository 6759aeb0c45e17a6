//! Run log: one JSON object per line, each with a `type` tag.
//!
//! Record types, in the order they typically appear:
//!
//! - `header`: scenario name, seed, sim step, hypothesis sets.
//! - `state`: ground truth (robot state, human positions and goals).
//! - `observation`: a tracked human position and the snapped action.
//! - `belief`: joint belief over `(β, g)` for one human, row-major by β.
//! - `prediction`: a prediction stack summary; `stack_record` is its index
//!   in the layered-grid file when it was written there.
//! - `plan`: planner output and diagnostics.
//! - `control`: the control applied from this time on.
//! - `event`: human goal arrivals and departures, belief resets, robot goals.
//! - `metrics`: the final run metrics.
//!
//! All times are simulated seconds; wall-clock measurements never appear in
//! the log, so a `(scenario, seed)` pair always produces the same bytes.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::agent_models::{RobotControl, RobotState};
use crate::planners::PlanStatus;

use super::episode::RunMetrics;
use super::world::WorldEvent;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanTruth {
    pub x: f64,
    pub y: f64,
    pub goal: [f64; 2],
    pub dwelling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "planner", rename_all = "snake_case")]
pub enum PlanRecord {
    Mppi {
        control: RobotControl,
        /// Index of the emergency maneuver that replaced the sampled
        /// solution, if any.
        fallback: Option<usize>,
        best_cost: f64,
        mean_cost: f64,
        effective_samples: f64,
        /// Predicted positions of the lowest-cost rollout.
        best_rollout: Vec<[f64; 2]>,
    },
    AnaStar {
        status: PlanStatus,
        cost: Option<f64>,
        solutions: Vec<f64>,
        expansions: usize,
        collision_free: bool,
        /// Whether the new path replaced the previous one.
        adopted: bool,
        /// `[x, y, t]` waypoints.
        waypoints: Vec<[f64; 3]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventRecord {
    World(WorldEvent),
    BeliefReset { human: usize },
    RobotGoalReached { index: usize },
    Collision { human: usize, distance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Header {
        scenario: String,
        seed: u64,
        dt_s: f64,
        betas: Vec<f64>,
        goals: Vec<[f64; 2]>,
    },
    State {
        t: f64,
        step: u64,
        robot: RobotState,
        humans: Vec<HumanTruth>,
    },
    Observation {
        t: f64,
        human: usize,
        x: f64,
        y: f64,
        action: Option<usize>,
        speed: Option<f64>,
        stationary: bool,
    },
    Belief {
        t: f64,
        human: usize,
        probabilities: Vec<f64>,
    },
    Prediction {
        t: f64,
        index: u64,
        base_time: f64,
        dt_s: f64,
        layers: usize,
        max_occupancy: f64,
        stack_record: Option<u64>,
    },
    Plan {
        t: f64,
        #[serde(flatten)]
        plan: PlanRecord,
    },
    Control {
        t: f64,
        a: f64,
        omega: f64,
    },
    Event {
        t: f64,
        event: EventRecord,
    },
    Metrics {
        metrics: RunMetrics,
    },
}

/// Append-only JSON-lines writer.
pub struct RunLog<W: Write> {
    out: W,
    records: u64,
}

impl<W: Write> RunLog<W> {
    pub fn new(out: W) -> Self {
        Self { out, records: 0 }
    }

    pub fn write(&mut self, r: &Record) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, r)?;
        self.out.write_all(b"\n")?;
        self.records += 1;
        Ok(())
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parses a whole run log.
pub fn read_log<R: BufRead>(input: R) -> io::Result<Vec<Record>> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|(i, l)| {
            let l = l?;
            serde_json::from_str(&l)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let recs = vec![
            Record::Control {
                t: 0.5,
                a: 1.0,
                omega: -0.25,
            },
            Record::Plan {
                t: 0.1,
                plan: PlanRecord::AnaStar {
                    status: PlanStatus::Optimal,
                    cost: Some(1.5),
                    solutions: vec![2.0, 1.5],
                    expansions: 10,
                    collision_free: true,
                    adopted: true,
                    waypoints: vec![[0.0, 0.0, 0.1]],
                },
            },
            Record::Event {
                t: 1.0,
                event: EventRecord::World(WorldEvent::HumanLeftGoal { human: 0, next_goal: 1 }),
            },
        ];
        let mut log = RunLog::new(Vec::new());
        for r in &recs {
            log.write(r).unwrap();
        }
        assert_eq!(log.records(), 3);
        let bytes = log.into_inner();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.lines().next().unwrap().starts_with(r#"{"type":"control""#));
        assert_eq!(read_log(bytes.as_slice()).unwrap(), recs);
    }
}
