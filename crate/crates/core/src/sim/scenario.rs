//! Scenario files: TOML with explicit units in field names.

use serde::{Deserialize, Serialize};

use crate::agent_models::{
    ControlSet, GoalSet, QFunction, RationalitySet, RobotLimits, RobotState,
};
use crate::belief::HypothesisSpace;
use crate::error::SimError;
use crate::occupancy::{GridSpec, OccupancyGrid};
use crate::planners::{AnaStarConfig, MppiConfig, TrackerGains};
use crate::predictor::{PredictionConfig, UnionMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    pub world: WorldSpec,
    #[serde(default)]
    pub timing: TimingSpec,
    pub human_model: HumanModelSpec,
    #[serde(default)]
    pub prediction: PredictionSpec,
    #[serde(default)]
    pub humans: Vec<HumanSpec>,
    pub robot: RobotSpec,
    #[serde(default)]
    pub planner: PlannerSpec,
    #[serde(default)]
    pub log: LogSpec,
}

fn default_name() -> String {
    "scenario".into()
}

/// Axis-aligned rectangular obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectObstacle {
    pub x_min_m: f64,
    pub y_min_m: f64,
    pub x_max_m: f64,
    pub y_max_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub width_m: f64,
    pub height_m: f64,
    pub resolution_m: f64,
    #[serde(default)]
    pub obstacles: Vec<RectObstacle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingSpec {
    pub sim_rate_hz: f64,
    pub observation_rate_hz: f64,
    pub prediction_rate_hz: f64,
    pub planner_rate_hz: f64,
}

impl Default for TimingSpec {
    fn default() -> Self {
        Self {
            sim_rate_hz: 30.0,
            observation_rate_hz: 30.0,
            prediction_rate_hz: 5.0,
            planner_rate_hz: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    Lookahead,
    GoalDistance,
}

/// The observer's model of every human: hypothesis sets and action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanModelSpec {
    pub goals_m: Vec<[f64; 2]>,
    #[serde(default = "d_beta_min")]
    pub beta_min: f64,
    #[serde(default = "d_beta_max")]
    pub beta_max: f64,
    #[serde(default = "d_beta_count")]
    pub beta_count: usize,
    #[serde(default = "d_speeds")]
    pub n_speeds: usize,
    #[serde(default = "d_headings")]
    pub n_headings: usize,
    #[serde(default = "d_v_max")]
    pub v_max_mps: f64,
    #[serde(default = "d_true")]
    pub include_stop: bool,
    #[serde(default = "d_utility")]
    pub utility: UtilityKind,
    #[serde(default = "d_lookahead")]
    pub lookahead_s: f64,
    #[serde(default = "d_speed_weight")]
    pub speed_weight: f64,
    #[serde(default)]
    pub heading_weight: f64,
    /// Observed speeds at or below this mark a human as stationary.
    #[serde(default = "d_stationary")]
    pub stationary_speed_mps: f64,
    /// While stationary, actions faster than this are removed from the
    /// prediction model.
    #[serde(default = "d_stationary_mask")]
    pub stationary_mask_speed_mps: f64,
    #[serde(default)]
    pub observation_noise_m: f64,
}

fn d_beta_min() -> f64 {
    0.1
}
fn d_beta_max() -> f64 {
    10.0
}
fn d_beta_count() -> usize {
    5
}
fn d_speeds() -> usize {
    4
}
fn d_headings() -> usize {
    24
}
fn d_v_max() -> f64 {
    1.0
}
fn d_true() -> bool {
    true
}
fn d_utility() -> UtilityKind {
    UtilityKind::Lookahead
}
fn d_lookahead() -> f64 {
    0.5
}
fn d_speed_weight() -> f64 {
    0.1
}
fn d_stationary() -> f64 {
    0.05
}
fn d_stationary_mask() -> f64 {
    0.25
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnionKind {
    Max,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictionSpec {
    pub samples: usize,
    pub steps: usize,
    pub dt_s: f64,
    pub smoothing_sigma_m: f64,
    pub union: UnionKind,
}

impl Default for PredictionSpec {
    fn default() -> Self {
        Self {
            samples: 2048,
            steps: 6,
            dt_s: 0.5,
            smoothing_sigma_m: 0.05,
            union: UnionKind::Max,
        }
    }
}

/// A ground-truth human.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanSpec {
    pub start_m: [f64; 2],
    /// Visited in order, cycling back to the first.
    pub goals_m: Vec<[f64; 2]>,
    pub beta: f64,
    #[serde(default = "d_v_max")]
    pub speed_max_mps: f64,
    #[serde(default = "d_dwell")]
    pub dwell_s: f64,
    #[serde(default = "d_goal_radius")]
    pub goal_radius_m: f64,
    #[serde(default = "d_human_radius")]
    pub radius_m: f64,
}

fn d_dwell() -> f64 {
    1.0
}
fn d_goal_radius() -> f64 {
    0.2
}
fn d_human_radius() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub start_m: [f64; 2],
    #[serde(default)]
    pub heading_rad: f64,
    /// Visited once, in order.
    pub goals_m: Vec<[f64; 2]>,
    #[serde(default = "d_robot_v")]
    pub v_max_mps: f64,
    #[serde(default = "d_one")]
    pub a_max_mps2: f64,
    #[serde(default = "d_one")]
    pub omega_max_radps: f64,
    #[serde(default = "d_robot_radius")]
    pub radius_m: f64,
    #[serde(default = "d_goal_tol")]
    pub goal_tolerance_m: f64,
}

fn d_robot_v() -> f64 {
    1.1
}
fn d_one() -> f64 {
    1.0
}
fn d_robot_radius() -> f64 {
    0.25
}
fn d_goal_tol() -> f64 {
    0.3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Mppi,
    AnaStar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MppiSpec {
    pub horizon_steps: usize,
    pub rollouts: usize,
    pub dt_plan_s: f64,
    pub temperature: f64,
    pub accel_std_mps2: f64,
    pub omega_std_radps: f64,
    /// Weights over `(x, y, θ, v)`.
    pub q_diag: [f64; 4],
    pub q_final_diag: [f64; 4],
    pub r: [f64; 2],
    pub quadratic_control: bool,
    pub collision_threshold: f64,
    pub collision_penalty: f64,
}

impl Default for MppiSpec {
    fn default() -> Self {
        let c = MppiConfig::default();
        Self {
            horizon_steps: c.horizon,
            rollouts: c.rollouts,
            dt_plan_s: c.dt_plan,
            temperature: c.temperature,
            accel_std_mps2: c.perturbation_std[0],
            omega_std_radps: c.perturbation_std[1],
            q_diag: c.q,
            q_final_diag: c.q_final,
            r: c.r,
            quadratic_control: c.quadratic_control,
            collision_threshold: c.collision_threshold,
            collision_penalty: c.collision_penalty,
        }
    }
}

impl MppiSpec {
    pub fn config(&self, seed: u64) -> MppiConfig {
        MppiConfig {
            horizon: self.horizon_steps,
            rollouts: self.rollouts,
            dt_plan: self.dt_plan_s,
            temperature: self.temperature,
            perturbation_std: [self.accel_std_mps2, self.omega_std_radps],
            q: self.q_diag,
            q_final: self.q_final_diag,
            r: self.r,
            quadratic_control: self.quadratic_control,
            collision_threshold: self.collision_threshold,
            collision_penalty: self.collision_penalty,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnaStarSpec {
    pub dt_plan_s: f64,
    pub time_limit_s: f64,
    /// Deterministic budget used in simulation; 0 disables it.
    pub max_expansions: usize,
    pub collision_threshold: f64,
    pub collision_penalty: f64,
    pub allow_wait: bool,
}

impl Default for AnaStarSpec {
    fn default() -> Self {
        let c = AnaStarConfig::default();
        Self {
            dt_plan_s: c.dt_plan,
            time_limit_s: 10.0,
            max_expansions: 200_000,
            collision_threshold: c.collision_threshold,
            collision_penalty: c.collision_penalty,
            allow_wait: c.allow_wait,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSpec {
    pub kind: PlannerKind,
    /// Extra clearance added to the footprint sum when checking predicted
    /// occupancy.
    pub safety_margin_m: f64,
    pub mppi: MppiSpec,
    pub ana_star: AnaStarSpec,
    pub tracker: TrackerGains,
}

impl Default for PlannerSpec {
    fn default() -> Self {
        Self {
            kind: PlannerKind::Mppi,
            safety_margin_m: 0.25,
            mppi: MppiSpec::default(),
            ana_star: AnaStarSpec::default(),
            tracker: TrackerGains::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogSpec {
    pub state_every_steps: usize,
    pub belief_every_observations: usize,
    pub log_observations: bool,
    /// Write every n-th prediction stack to the layered-grid file; 0 never.
    pub stack_every_predictions: usize,
}

impl Default for LogSpec {
    fn default() -> Self {
        Self {
            state_every_steps: 3,
            belief_every_observations: 10,
            log_observations: true,
            stack_every_predictions: 25,
        }
    }
}

/// Everything derived from a validated scenario.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub dt: f64,
    pub steps: u64,
    pub observe_every: u64,
    pub predict_every: u64,
    pub plan_every: u64,
    pub spec: GridSpec,
    pub static_mask: OccupancyGrid,
    pub controls: ControlSet,
    pub q: QFunction,
    pub hypotheses: HypothesisSpace,
    pub prediction: PredictionConfig,
    pub union: UnionMode,
    pub limits: RobotLimits,
    pub robot_start: RobotState,
}

fn cfg_err(msg: impl Into<String>) -> SimError {
    SimError::Config(msg.into())
}

fn every(name: &str, sim_rate: f64, rate: f64) -> Result<u64, SimError> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(cfg_err(format!("timing.{name} must be > 0")));
    }
    if rate > sim_rate * (1.0 + 1e-9) {
        return Err(cfg_err(format!("timing.{name} exceeds timing.sim_rate_hz")));
    }
    Ok((sim_rate / rate).round().max(1.0) as u64)
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn control_set(&self) -> Result<ControlSet, SimError> {
        let m = &self.human_model;
        Ok(ControlSet::grid(m.n_speeds, m.n_headings, m.v_max_mps, m.include_stop)?)
    }

    pub fn q_function(&self, goals: GoalSet) -> QFunction {
        let m = &self.human_model;
        let q = match m.utility {
            UtilityKind::Lookahead => QFunction::lookahead(goals, m.lookahead_s),
            UtilityKind::GoalDistance => QFunction::goal_distance(goals),
        };
        q.with_control_weights([m.speed_weight, m.heading_weight])
    }

    fn in_bounds(&self, p: [f64; 2]) -> bool {
        p.iter().all(|v| v.is_finite())
            && (0.0..=self.world.width_m).contains(&p[0])
            && (0.0..=self.world.height_m).contains(&p[1])
    }

    /// Checks every field and derives the runtime objects.
    pub fn compile(&self) -> Result<Compiled, SimError> {
        let w = &self.world;
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(cfg_err("duration_s must be > 0"));
        }
        if !(w.width_m > 0.0 && w.height_m > 0.0) {
            return Err(cfg_err("world.width_m and world.height_m must be > 0"));
        }
        let spec = GridSpec::covering(w.width_m, w.height_m, w.resolution_m)
            .map_err(|e| cfg_err(format!("world.resolution_m: {e}")))?;
        let mut static_mask = OccupancyGrid::zeros(spec);
        for (i, o) in w.obstacles.iter().enumerate() {
            if !(o.x_min_m < o.x_max_m && o.y_min_m < o.y_max_m) {
                return Err(cfg_err(format!("world.obstacles[{i}] has min >= max")));
            }
            for idx in 0..spec.len() {
                let (ix, iy) = spec.coords(idx);
                let c = spec.cell_center(ix, iy);
                if (o.x_min_m..=o.x_max_m).contains(&c[0]) && (o.y_min_m..=o.y_max_m).contains(&c[1]) {
                    static_mask.values_mut()[idx] = 1.0;
                }
            }
        }
        let t = &self.timing;
        if !(t.sim_rate_hz > 0.0 && t.sim_rate_hz.is_finite()) {
            return Err(cfg_err("timing.sim_rate_hz must be > 0"));
        }
        let observe_every = every("observation_rate_hz", t.sim_rate_hz, t.observation_rate_hz)?;
        let predict_every = every("prediction_rate_hz", t.sim_rate_hz, t.prediction_rate_hz)?;
        let plan_every = every("planner_rate_hz", t.sim_rate_hz, t.planner_rate_hz)?;
        let dt = 1.0 / t.sim_rate_hz;

        let m = &self.human_model;
        let goals = GoalSet::new(m.goals_m.clone())
            .map_err(|e| cfg_err(format!("human_model.goals_m: {e}")))?;
        for (i, g) in m.goals_m.iter().enumerate() {
            if !self.in_bounds(*g) {
                return Err(cfg_err(format!("human_model.goals_m[{i}] is outside the world")));
            }
        }
        let betas = RationalitySet::log_spaced(m.beta_min, m.beta_max, m.beta_count)
            .map_err(|e| cfg_err(format!("human_model.beta_*: {e}")))?;
        let controls = self
            .control_set()
            .map_err(|e| cfg_err(format!("human_model control set: {e}")))?;
        if !(m.stationary_speed_mps >= 0.0 && m.stationary_mask_speed_mps >= 0.0 && m.observation_noise_m >= 0.0) {
            return Err(cfg_err(
                "human_model.stationary_speed_mps, stationary_mask_speed_mps and observation_noise_m must be >= 0",
            ));
        }
        if !(m.lookahead_s > 0.0) {
            return Err(cfg_err("human_model.lookahead_s must be > 0"));
        }
        let q = self.q_function(goals.clone());
        let hypotheses = HypothesisSpace::new(betas, goals);

        let p = &self.prediction;
        let prediction = PredictionConfig {
            samples: p.samples,
            steps: p.steps,
            dt_s: p.dt_s,
            smoothing_sigma_m: p.smoothing_sigma_m,
            seed: self.seed,
        };
        prediction
            .validate()
            .map_err(|e| cfg_err(format!("prediction: {e}")))?;
        let union = match p.union {
            UnionKind::Max => UnionMode::Max,
            UnionKind::Independent => UnionMode::Independent,
        };

        let blocked = |p: [f64; 2]| spec.checked_index(p[0], p[1]).is_some_and(|i| static_mask.values()[i] > 0.5);
        for (i, h) in self.humans.iter().enumerate() {
            if !self.in_bounds(h.start_m) || blocked(h.start_m) {
                return Err(cfg_err(format!("humans[{i}].start_m is outside the free space")));
            }
            if h.goals_m.is_empty() {
                return Err(cfg_err(format!("humans[{i}].goals_m is empty")));
            }
            if let Some(k) = h.goals_m.iter().position(|g| !self.in_bounds(*g)) {
                return Err(cfg_err(format!("humans[{i}].goals_m[{k}] is outside the world")));
            }
            if !(h.beta > 0.0 && h.beta.is_finite()) {
                return Err(cfg_err(format!("humans[{i}].beta must be > 0")));
            }
            if !(h.speed_max_mps > 0.0 && h.dwell_s >= 0.0 && h.goal_radius_m > 0.0 && h.radius_m >= 0.0) {
                return Err(cfg_err(format!(
                    "humans[{i}]: speed_max_mps and goal_radius_m must be > 0, dwell_s and radius_m >= 0"
                )));
            }
        }

        let r = &self.robot;
        if !self.in_bounds(r.start_m) || blocked(r.start_m) {
            return Err(cfg_err("robot.start_m is outside the free space"));
        }
        if let Some(k) = r.goals_m.iter().position(|g| !self.in_bounds(*g) || blocked(*g)) {
            return Err(cfg_err(format!("robot.goals_m[{k}] is outside the free space")));
        }
        if !(r.v_max_mps > 0.0 && r.a_max_mps2 > 0.0 && r.omega_max_radps > 0.0) {
            return Err(cfg_err("robot limits must be > 0"));
        }
        if !(r.radius_m >= 0.0 && r.goal_tolerance_m > 0.0) {
            return Err(cfg_err("robot.radius_m must be >= 0 and goal_tolerance_m > 0"));
        }
        let pl = &self.planner;
        if !(pl.safety_margin_m >= 0.0) {
            return Err(cfg_err("planner.safety_margin_m must be >= 0"));
        }
        pl.mppi
            .config(0)
            .validate()
            .map_err(|e| cfg_err(format!("planner.mppi: {e}")))?;
        if !(pl.ana_star.dt_plan_s > 0.0 && pl.ana_star.time_limit_s > 0.0) {
            return Err(cfg_err("planner.ana_star.dt_plan_s and time_limit_s must be > 0"));
        }
        if self.log.state_every_steps == 0 || self.log.belief_every_observations == 0 {
            return Err(cfg_err("log.state_every_steps and belief_every_observations must be >= 1"));
        }

        Ok(Compiled {
            dt,
            steps: (self.duration_s * t.sim_rate_hz).round() as u64,
            observe_every,
            predict_every,
            plan_every,
            spec,
            static_mask,
            controls,
            q,
            hypotheses,
            prediction,
            union,
            limits: RobotLimits {
                v_max: r.v_max_mps,
                a_max: r.a_max_mps2,
                omega_max: r.omega_max_radps,
            },
            robot_start: RobotState::new(r.start_m[0], r.start_m[1], 0.0, r.heading_rad),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
duration_s = 10.0

[world]
width_m = 4.0
height_m = 3.0
resolution_m = 0.1

[human_model]
goals_m = [[1.0, 1.0], [3.0, 2.0]]

[robot]
start_m = [0.5, 0.5]
goals_m = [[3.5, 2.5]]
"#;

    #[test]
    fn minimal_scenario_gets_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        let c = s.compile().unwrap();
        assert_eq!(c.steps, 300);
        assert_eq!((c.observe_every, c.predict_every, c.plan_every), (1, 6, 3));
        assert_eq!(c.controls.len(), 97);
        assert_eq!(c.hypotheses.len(), 10);
        assert_eq!(c.spec.width, 40);
        assert_eq!(c.limits, RobotLimits::default());
        let back = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn parse_errors_name_the_field() {
        let bad = MINIMAL.replace("resolution_m = 0.1", "resolution_m = \"fine\"");
        let e = Scenario::from_toml(&bad).unwrap_err().to_string();
        assert!(e.contains("resolution_m"), "{e}");
        let bad = MINIMAL.replace("duration_s = 10.0", "duration_s = 10.0\nspeed = 3");
        let e = Scenario::from_toml(&bad).unwrap_err().to_string();
        assert!(e.contains("speed"), "{e}");
    }

    #[test]
    fn validation_rejects_inconsistencies() {
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.robot.goals_m.push([9.0, 1.0]);
        assert!(s.compile().unwrap_err().to_string().contains("robot.goals_m[1]"));
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.timing.observation_rate_hz = 60.0;
        assert!(s.compile().is_err());
        let mut s = Scenario::from_toml(MINIMAL).unwrap();
        s.world.obstacles.push(RectObstacle {
            x_min_m: 0.0,
            y_min_m: 0.0,
            x_max_m: 1.0,
            y_max_m: 1.0,
        });
        assert!(s.compile().unwrap_err().to_string().contains("robot.start_m"));
    }
}
