//! Ground-truth world: noisy-rational humans with switching goals and a
//! Dubins robot.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::agent_models::{
    boltzmann_policy, human_step, ControlSet, GoalSet, HumanState, QFunction, RobotControl,
    RobotLimits, RobotState,
};
use crate::error::SimError;
use crate::rng::{stream, Domain};

use super::scenario::Scenario;

/// A scripted human. Between goals it samples actions from its own Boltzmann
/// policy toward the current goal; on arrival it dwells, then moves on.
#[derive(Debug, Clone)]
pub struct Human {
    pub state: HumanState,
    pub goal_idx: usize,
    pub beta: f64,
    pub radius: f64,
    goals: GoalSet,
    controls: ControlSet,
    q: QFunction,
    goal_radius: f64,
    dwell_s: f64,
    /// Remaining dwell time while standing at a goal.
    dwell_left: Option<f64>,
}

impl Human {
    pub fn goal(&self) -> [f64; 2] {
        self.goals.get(self.goal_idx)
    }

    pub fn is_dwelling(&self) -> bool {
        self.dwell_left.is_some()
    }

    pub fn speed_max(&self) -> f64 {
        self.controls.v_max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum WorldEvent {
    HumanReachedGoal { human: usize, goal: usize },
    /// The human left a goal for `next_goal`; observers reset their belief.
    HumanLeftGoal { human: usize, next_goal: usize },
}

#[derive(Debug, Clone)]
pub struct World {
    pub step: u64,
    pub time: f64,
    pub humans: Vec<Human>,
    pub robot: RobotState,
    pub limits: RobotLimits,
    dt: f64,
    seed: u64,
}

impl World {
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self, SimError> {
        let c = scenario.compile()?;
        let m = &scenario.human_model;
        let humans = scenario
            .humans
            .iter()
            .map(|h| -> Result<Human, SimError> {
                let goals = GoalSet::new(h.goals_m.clone())?;
                let controls = ControlSet::grid(m.n_speeds, m.n_headings, h.speed_max_mps, m.include_stop)?;
                Ok(Human {
                    state: HumanState::new(h.start_m[0], h.start_m[1]),
                    goal_idx: 0,
                    beta: h.beta,
                    radius: h.radius_m,
                    q: scenario.q_function(goals.clone()),
                    goals,
                    controls,
                    goal_radius: h.goal_radius_m,
                    dwell_s: h.dwell_s,
                    dwell_left: None,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            step: 0,
            time: 0.0,
            humans,
            robot: c.robot_start,
            limits: c.limits,
            dt: c.dt,
            seed,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances one step: humans act, the robot applies `u`.
    pub fn step(&mut self, u: RobotControl) -> Result<Vec<WorldEvent>, SimError> {
        let dt = self.dt;
        let mut events = Vec::new();
        for (i, h) in self.humans.iter_mut().enumerate() {
            if let Some(left) = h.dwell_left {
                let left = left - dt;
                if left > 1e-9 || h.goals.len() == 1 {
                    h.dwell_left = Some(left.max(0.0));
                } else {
                    h.dwell_left = None;
                    h.goal_idx = (h.goal_idx + 1) % h.goals.len();
                    events.push(WorldEvent::HumanLeftGoal {
                        human: i,
                        next_goal: h.goal_idx,
                    });
                }
                continue;
            }
            let pi = boltzmann_policy(h.state, h.beta, h.goal_idx, &h.controls, &h.q)?;
            let mut rng = stream(self.seed, Domain::Human, self.step, i as u64);
            let r: f64 = rng.random();
            let mut acc = 0.0;
            let mut a = pi.len() - 1;
            for (k, p) in pi.iter().enumerate() {
                acc += p;
                if r < acc {
                    a = k;
                    break;
                }
            }
            h.state = human_step(h.state, h.controls.get(a), dt);
            if h.state.distance_sq_to(h.goal()).sqrt() <= h.goal_radius {
                h.dwell_left = Some(h.dwell_s);
                events.push(WorldEvent::HumanReachedGoal {
                    human: i,
                    goal: h.goal_idx,
                });
            }
        }
        self.robot = crate::agent_models::robot_step(self.robot, u, dt, &self.limits);
        self.step += 1;
        self.time = self.step as f64 * dt;
        Ok(events)
    }

    /// Human positions as seen by the tracker, with Gaussian noise of
    /// standard deviation `noise_std`. `index` numbers the observation.
    pub fn observe(&self, noise_std: f64, index: u64) -> Vec<HumanState> {
        if noise_std == 0.0 {
            return self.humans.iter().map(|h| h.state).collect();
        }
        let n = Normal::new(0.0, noise_std).expect("finite noise std");
        self.humans
            .iter()
            .enumerate()
            .map(|(i, h)| {
                let mut rng = stream(self.seed, Domain::Observation, index, i as u64);
                HumanState::new(h.state.x + n.sample(&mut rng), h.state.y + n.sample(&mut rng))
            })
            .collect()
    }

    /// Distance between the robot center and each human center.
    pub fn robot_distances(&self) -> Vec<f64> {
        let p = self.robot.position();
        self.humans.iter().map(|h| h.state.distance_sq_to(p).sqrt()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(humans: &str) -> Scenario {
        Scenario::from_toml(&format!(
            r#"
duration_s = 20.0
[world]
width_m = 8.0
height_m = 4.0
resolution_m = 0.1
[human_model]
goals_m = [[7.0, 2.0], [1.0, 2.0]]
[robot]
start_m = [1.0, 1.0]
goals_m = [[1.0, 1.0]]
{humans}
"#
        ))
        .unwrap()
    }

    #[test]
    fn empty_world_with_idle_robot_is_fixed() {
        let mut w = World::new(&scenario(""), 1).unwrap();
        let r0 = w.robot;
        for _ in 0..50 {
            assert!(w.step(RobotControl::ZERO).unwrap().is_empty());
        }
        assert_eq!(w.robot, r0);
    }

    #[test]
    fn rational_human_walks_straight() {
        let mut s = scenario(
            r#"
[[humans]]
start_m = [1.0, 2.0]
goals_m = [[7.0, 2.0]]
beta = 1e6
speed_max_mps = 1.0
"#,
        );
        // One-step utility: the human minimizes its distance after each step.
        s.human_model.lookahead_s = 1.0 / s.timing.sim_rate_hz;
        s.human_model.speed_weight = 0.0;
        let mut w = World::new(&s, 3).unwrap();
        let dt = w.dt();
        let mut arrived = None;
        for _ in 0..400 {
            let ev = w.step(RobotControl::ZERO).unwrap();
            assert!(w.humans[0].state.y == 2.0);
            if ev.iter().any(|e| matches!(e, WorldEvent::HumanReachedGoal { .. })) {
                arrived = Some(w.time);
                break;
            }
        }
        // Full speed until the goal disc is entered.
        let expect = (6.0 - 0.2) / 1.0;
        let t = arrived.expect("human arrives");
        assert!((t - expect).abs() <= dt + 1e-9, "arrived at {t}, expected {expect}");
    }

    #[test]
    fn dwell_then_switch_fires_once() {
        let s = scenario(
            r#"
[[humans]]
start_m = [6.9, 2.0]
goals_m = [[7.0, 2.0], [1.0, 2.0]]
beta = 1e6
dwell_s = 1.0
"#,
        );
        let mut w = World::new(&s, 0).unwrap();
        let mut events = Vec::new();
        for _ in 0..60 {
            events.extend(w.step(RobotControl::ZERO).unwrap());
        }
        let left: Vec<_> = events
            .iter()
            .filter(|e| matches!(e, WorldEvent::HumanLeftGoal { .. }))
            .collect();
        assert_eq!(left.len(), 1);
        assert!(matches!(events[0], WorldEvent::HumanReachedGoal { human: 0, goal: 0 }));
        assert_eq!(w.humans[0].goal_idx, 1);
    }

    #[test]
    fn human_speed_is_bounded() {
        let s = scenario(
            r#"
[[humans]]
start_m = [4.0, 2.0]
goals_m = [[7.0, 2.0], [1.0, 2.0]]
beta = 0.5
speed_max_mps = 0.8
"#,
        );
        let mut w = World::new(&s, 9).unwrap();
        for _ in 0..300 {
            let before = w.humans[0].state;
            w.step(RobotControl::ZERO).unwrap();
            assert!(before.distance(&w.humans[0].state) <= 0.8 * w.dt() + 1e-12);
        }
    }

    #[test]
    fn observation_noise() {
        let s = scenario(
            r#"
[[humans]]
start_m = [4.0, 2.0]
goals_m = [[7.0, 2.0]]
beta = 1.0
"#,
        );
        let w = World::new(&s, 5).unwrap();
        assert_eq!(w.observe(0.0, 0)[0], w.humans[0].state);
        let xs: Vec<f64> = (0..10_000).map(|k| w.observe(0.03, k)[0].x - 4.0).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        assert!((sd - 0.03).abs() < 0.003, "std {sd}");
        assert_eq!(w.observe(0.03, 17), w.observe(0.03, 17));
    }
}
