//! Model Predictive Path Integral control for the Dubins robot.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent_models::{robot_step, wrap_angle, RobotControl, RobotLimits, RobotState};
use crate::error::PlanError;
use crate::exec::Execution;
use crate::occupancy::{disc_offsets, CollisionField, GridSpec, OccupancyGrid};
use crate::predictor::{layer_index, PredictionStack};
use crate::rng::{stream, Domain};

/// Rollouts per RNG chunk.
const ROLLOUT_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MppiConfig {
    /// Horizon `K` in steps.
    pub horizon: usize,
    /// Rollout count `N`.
    pub rollouts: usize,
    pub dt_plan: f64,
    /// Temperature `τ`.
    pub temperature: f64,
    /// Perturbation std for `(a, ω)`.
    pub perturbation_std: [f64; 2],
    /// Diagonal of `Q` over `(x, y, θ, v)`.
    pub q: [f64; 4],
    pub q_final: [f64; 4],
    pub r: [f64; 2],
    /// Use `uᵀ diag(R) u` instead of the linear `Rᵀ u`.
    pub quadratic_control: bool,
    pub collision_threshold: f64,
    pub collision_penalty: f64,
    pub seed: u64,
}

impl Default for MppiConfig {
    fn default() -> Self {
        let q = [3.0, 3.0, 10.0, 0.0];
        Self {
            horizon: 40,
            rollouts: 1024,
            dt_plan: 0.1,
            temperature: 1.0,
            perturbation_std: [0.5, 0.3],
            q,
            q_final: q.map(|w| w / 5.0),
            r: [2.0, 1.0],
            quadratic_control: false,
            collision_threshold: 0.1,
            collision_penalty: 1000.0,
            seed: 0,
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.horizon == 0 || self.rollouts == 0 {
            return Err(PlanError::InvalidConfig("horizon and rollouts must be >= 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(PlanError::InvalidConfig("temperature must be > 0"));
        }
        if !(self.dt_plan > 0.0) {
            return Err(PlanError::InvalidConfig("dt_plan must be > 0"));
        }
        if !self.perturbation_std.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(PlanError::InvalidConfig("perturbation stds must be > 0"));
        }
        Ok(())
    }
}

/// Per-layer collision indicators for a disc-shaped robot, plus static
/// obstacles. Positions off the grid count as collisions.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    inner: Option<MapLayers>,
    present: Option<Present>,
}

/// Currently observed occupancy, applied to times before a cutoff.
#[derive(Debug, Clone, PartialEq)]
struct Present {
    spec: GridSpec,
    collides: Vec<bool>,
    until: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct MapLayers {
    spec: GridSpec,
    layers: Vec<Vec<bool>>,
    base_time: f64,
    dt: f64,
}

impl CostMap {
    /// No obstacles anywhere.
    pub fn free() -> Self {
        Self {
            inner: None,
            present: None,
        }
    }

    pub fn new(
        stack: &PredictionStack,
        static_mask: Option<&OccupancyGrid>,
        radius_m: f64,
        threshold: f64,
    ) -> Result<Self, PlanError> {
        if stack.layers.is_empty() {
            return Err(PlanError::InvalidConfig("prediction stack has no layers"));
        }
        let spec = stack.spec;
        let mut inflated = vec![false; spec.len()];
        if let Some(mask) = static_mask {
            if *mask.spec() != spec {
                return Err(PlanError::InvalidConfig("static mask and stack grids differ"));
            }
            let offsets = disc_offsets(&spec, radius_m);
            let (w, h) = (spec.width as i64, spec.height as i64);
            for (i, _) in mask.values().iter().enumerate().filter(|(_, v)| **v > 0.5) {
                let (cx, cy) = spec.coords(i);
                for &(dx, dy) in &offsets {
                    let (x, y) = (cx as i64 + dx, cy as i64 + dy);
                    if x >= 0 && y >= 0 && x < w && y < h {
                        inflated[(y * w + x) as usize] = true;
                    }
                }
            }
        }
        let layers = stack
            .layers
            .iter()
            .map(|l| {
                let f = CollisionField::new(l, radius_m);
                (0..spec.len())
                    .map(|i| inflated[i] || f.at_index(i) >= threshold)
                    .collect()
            })
            .collect();
        Ok(Self {
            inner: Some(MapLayers {
                spec,
                layers,
                base_time: stack.base_time,
                dt: stack.dt,
            }),
            present: None,
        })
    }

    /// Adds occupancy known now, consulted for times before `until`. Covers
    /// the gap before the first prediction layer.
    pub fn with_present(mut self, grid: &OccupancyGrid, radius_m: f64, threshold: f64, until: f64) -> Self {
        let f = CollisionField::new(grid, radius_m);
        self.present = Some(Present {
            spec: *grid.spec(),
            collides: (0..grid.spec().len()).map(|i| f.at_index(i) >= threshold).collect(),
            until,
        });
        self
    }

    /// Whether a robot centered at `pos` at absolute time `t` collides.
    pub fn collides(&self, pos: [f64; 2], t: f64) -> bool {
        if let Some(p) = &self.present {
            if t < p.until && p.spec.checked_index(pos[0], pos[1]).is_some_and(|i| p.collides[i]) {
                return true;
            }
        }
        let Some(m) = &self.inner else {
            return false;
        };
        match m.spec.checked_index(pos[0], pos[1]) {
            None => true,
            Some(i) => m.layers[layer_index(m.base_time, m.dt, m.layers.len(), t)][i],
        }
    }
}

/// Stage cost. Steps `t_index < K` pay the running cost (state, control,
/// collision and elapsed time); `t_index == K` pays the terminal cost.
pub fn mppi_cost(
    z: &RobotState,
    u: &RobotControl,
    t_index: usize,
    t0: f64,
    goal: &RobotState,
    map: &CostMap,
    cfg: &MppiConfig,
) -> f64 {
    let e = [z.x - goal.x, z.y - goal.y, wrap_angle(z.theta - goal.theta), z.v - goal.v];
    let terminal = t_index >= cfg.horizon;
    let w = if terminal { &cfg.q_final } else { &cfg.q };
    let mut c: f64 = e.iter().zip(w).map(|(e, w)| w * e * e).sum();
    if map.collides(z.position(), t0 + t_index as f64 * cfg.dt_plan) {
        c += cfg.collision_penalty;
    }
    if !terminal {
        c += if cfg.quadratic_control {
            cfg.r[0] * u.a * u.a + cfg.r[1] * u.omega * u.omega
        } else {
            cfg.r[0] * u.a + cfg.r[1] * u.omega
        };
        c += cfg.dt_plan;
    }
    c
}

/// Normalized weights `exp(-(S - S_min)/τ)`; non-finite costs get weight 0.
pub fn mppi_weights(costs: &[f64], tau: f64) -> Result<Vec<f64>, PlanError> {
    let min = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(PlanError::NonFiniteCosts);
    }
    let mut w: Vec<f64> = costs
        .iter()
        .map(|&c| if c.is_finite() { (-(c - min) / tau).exp() } else { 0.0 })
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    Ok(w)
}

/// One sampled trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    /// `K + 1` states starting at the current state.
    pub states: Vec<RobotState>,
    /// Perturbations added to the nominal sequence.
    pub perturbations: Vec<RobotControl>,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MppiDiagnostics {
    pub best_cost: f64,
    pub mean_cost: f64,
    /// Effective sample size `1 / Σ w²`.
    pub effective_samples: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MppiOutput {
    pub controls: Vec<RobotControl>,
    pub diagnostics: MppiDiagnostics,
    pub best: Rollout,
}

#[allow(clippy::too_many_arguments)]
fn rollout(
    z: RobotState,
    t0: f64,
    nominal: &[RobotControl],
    goal: &RobotState,
    map: &CostMap,
    cfg: &MppiConfig,
    limits: &RobotLimits,
    rng: &mut impl rand::Rng,
) -> Rollout {
    let mut states = Vec::with_capacity(nominal.len() + 1);
    let mut perturbations = Vec::with_capacity(nominal.len());
    states.push(z);
    let mut s = z;
    let mut cost = 0.0;
    for (k, u0) in nominal.iter().enumerate() {
        let na: f64 = StandardNormal.sample(rng);
        let nw: f64 = StandardNormal.sample(rng);
        let d = RobotControl::new(na * cfg.perturbation_std[0], nw * cfg.perturbation_std[1]);
        let u = limits.clamp(RobotControl::new(u0.a + d.a, u0.omega + d.omega));
        cost += mppi_cost(&s, &u, k, t0, goal, map, cfg);
        s = robot_step(s, u, cfg.dt_plan, limits);
        states.push(s);
        perturbations.push(d);
    }
    cost += mppi_cost(&s, &RobotControl::ZERO, cfg.horizon, t0, goal, map, cfg);
    Rollout {
        states,
        perturbations,
        cost,
    }
}

/// Samples `N` perturbed rollouts around `nominal`. `call` positions the
/// random streams, so successive calls draw fresh perturbations.
#[allow(clippy::too_many_arguments)]
pub fn mppi_rollouts(
    z: RobotState,
    t0: f64,
    nominal: &[RobotControl],
    goal: &RobotState,
    map: &CostMap,
    cfg: &MppiConfig,
    limits: &RobotLimits,
    call: u64,
    exec: &Execution,
) -> Result<Vec<Rollout>, PlanError> {
    cfg.validate()?;
    if nominal.len() != cfg.horizon {
        return Err(PlanError::InvalidConfig("nominal sequence length must equal the horizon"));
    }
    let chunks: Vec<(usize, usize)> = (0..cfg.rollouts)
        .step_by(ROLLOUT_CHUNK)
        .enumerate()
        .map(|(c, lo)| (c, (cfg.rollouts - lo).min(ROLLOUT_CHUNK)))
        .collect();
    let run = |&(c, n): &(usize, usize)| {
        let mut rng = stream(cfg.seed, Domain::Mppi, call, c as u64);
        (0..n)
            .map(|_| rollout(z, t0, nominal, goal, map, cfg, limits, &mut rng))
            .collect::<Vec<_>>()
    };
    let out: Vec<Vec<Rollout>> = match exec {
        Execution::Serial => chunks.iter().map(run).collect(),
        Execution::Parallel(_) => exec.install(|| chunks.par_iter().map(run).collect()),
    };
    Ok(out.into_iter().flatten().collect())
}

/// One MPPI iteration: sample rollouts, weight them by cost, and return the
/// clamped updated control sequence.
#[allow(clippy::too_many_arguments)]
pub fn mppi_step(
    z: RobotState,
    t0: f64,
    nominal: &[RobotControl],
    goal: &RobotState,
    map: &CostMap,
    cfg: &MppiConfig,
    limits: &RobotLimits,
    call: u64,
    exec: &Execution,
) -> Result<MppiOutput, PlanError> {
    let rollouts = mppi_rollouts(z, t0, nominal, goal, map, cfg, limits, call, exec)?;
    let costs: Vec<f64> = rollouts.iter().map(|r| r.cost).collect();
    let w = mppi_weights(&costs, cfg.temperature)?;
    let controls = nominal
        .iter()
        .enumerate()
        .map(|(k, u0)| {
            let (mut da, mut dw) = (0.0, 0.0);
            for (r, wi) in rollouts.iter().zip(&w) {
                da += wi * r.perturbations[k].a;
                dw += wi * r.perturbations[k].omega;
            }
            limits.clamp(RobotControl::new(u0.a + da, u0.omega + dw))
        })
        .collect();
    let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
    let best_idx = (0..costs.len())
        .filter(|&i| costs[i].is_finite())
        .min_by(|&a, &b| costs[a].total_cmp(&costs[b]))
        .expect("at least one finite cost");
    let diagnostics = MppiDiagnostics {
        best_cost: costs[best_idx],
        mean_cost: finite.iter().sum::<f64>() / finite.len() as f64,
        effective_samples: 1.0 / w.iter().map(|x| x * x).sum::<f64>(),
    };
    let best = rollouts.into_iter().nth(best_idx).expect("index in range");
    Ok(MppiOutput {
        controls,
        diagnostics,
        best,
    })
}

/// Cost and states of a fixed control sequence under the same cost as the
/// sampled rollouts.
#[allow(clippy::too_many_arguments)]
pub fn sequence_cost(
    z: RobotState,
    t0: f64,
    controls: &[RobotControl],
    goal: &RobotState,
    map: &CostMap,
    cfg: &MppiConfig,
    limits: &RobotLimits,
) -> (f64, Vec<RobotState>) {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(z);
    let mut s = z;
    let mut cost = 0.0;
    for (k, u) in controls.iter().enumerate() {
        let u = limits.clamp(*u);
        cost += mppi_cost(&s, &u, k, t0, goal, map, cfg);
        s = robot_step(s, u, cfg.dt_plan, limits);
        states.push(s);
    }
    cost += mppi_cost(&s, &RobotControl::ZERO, controls.len(), t0, goal, map, cfg);
    (cost, states)
}

/// Warm start for the next call: drop the executed first control and repeat
/// the last one.
pub fn shift_nominal(controls: &mut Vec<RobotControl>) {
    if controls.is_empty() {
        return;
    }
    controls.remove(0);
    let last = controls.last().copied().unwrap_or(RobotControl::ZERO);
    controls.push(last);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn goal() -> RobotState {
        RobotState::new(0.0, 0.0, 0.0, 0.0)
    }

    #[test]
    fn cost_examples() {
        let cfg = MppiConfig::default();
        let map = CostMap::free();
        let g = goal();
        assert_eq!(mppi_cost(&g, &RobotControl::ZERO, cfg.horizon, 0.0, &g, &map, &cfg), 0.0);
        let z = RobotState::new(1.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(mppi_cost(&z, &RobotControl::ZERO, 0, 0.0, &g, &map, &cfg), 3.1, epsilon = 1e-12);
        assert_abs_diff_eq!(
            mppi_cost(&z, &RobotControl::ZERO, cfg.horizon, 0.0, &g, &map, &cfg),
            0.6,
            epsilon = 1e-12
        );
    }

    #[test]
    fn control_term_linear_or_quadratic() {
        let mut cfg = MppiConfig::default();
        let g = goal();
        let u = RobotControl::new(-0.5, 0.5);
        let lin = mppi_cost(&g, &u, 0, 0.0, &g, &CostMap::free(), &cfg);
        assert_abs_diff_eq!(lin, 2.0 * -0.5 + 0.5 + 0.1, epsilon = 1e-12);
        cfg.quadratic_control = true;
        let quad = mppi_cost(&g, &u, 0, 0.0, &g, &CostMap::free(), &cfg);
        assert_abs_diff_eq!(quad, 2.0 * 0.25 + 0.25 + 0.1, epsilon = 1e-12);
    }

    #[test]
    fn collision_term_from_stack() {
        let spec = GridSpec::new(10, 10, 0.1, [0.0, 0.0]).unwrap();
        let mut stack = PredictionStack::empty(spec, 2, 0.0, 0.1);
        stack.layers[1].set(5, 5, 0.5);
        let map = CostMap::new(&stack, None, 0.05, 0.1).unwrap();
        assert!(!map.collides([0.55, 0.55], 0.1));
        assert!(map.collides([0.55, 0.55], 0.2));
        assert!(map.collides([0.55, 0.55], 5.0));
        assert!(map.collides([-1.0, 0.5], 0.1));
        let mut mask = OccupancyGrid::zeros(spec);
        mask.set(0, 0, 1.0);
        let map = CostMap::new(&stack, Some(&mask), 0.15, 0.1).unwrap();
        assert!(map.collides([0.15, 0.05], 0.1));
        assert!(!map.collides([0.35, 0.05], 0.1));
        let mut now = OccupancyGrid::zeros(spec);
        now.set(8, 8, 1.0);
        let map = map.with_present(&now, 0.05, 0.1, 0.5);
        assert!(map.collides([0.85, 0.85], 0.4));
        assert!(!map.collides([0.85, 0.85], 0.5));
    }

    #[test]
    fn weights_examples_and_errors() {
        let w = mppi_weights(&[1.0, 1.0, 1.0, 1.0], 1.0).unwrap();
        assert!(w.iter().all(|x| *x == 0.25));
        let w = mppi_weights(&[0.0, f64::INFINITY, f64::NAN], 1.0).unwrap();
        assert_eq!(w, vec![1.0, 0.0, 0.0]);
        assert!(mppi_weights(&[f64::NAN, f64::INFINITY], 1.0).is_err());
        let w = mppi_weights(&[0.0, 1e6], 1.0).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
    }

    fn small_cfg(n: usize) -> MppiConfig {
        MppiConfig {
            horizon: 10,
            rollouts: n,
            ..MppiConfig::default()
        }
    }

    #[test]
    fn single_rollout_collapses() {
        let cfg = small_cfg(1);
        let lim = RobotLimits::default();
        let z = RobotState::new(0.0, 0.0, 0.2, 0.0);
        let nominal = vec![RobotControl::new(0.1, -0.05); cfg.horizon];
        let g = RobotState::new(2.0, 1.0, 0.0, 0.4);
        let r = mppi_rollouts(z, 0.0, &nominal, &g, &CostMap::free(), &cfg, &lim, 3, &Execution::Serial).unwrap();
        let out = mppi_step(z, 0.0, &nominal, &g, &CostMap::free(), &cfg, &lim, 3, &Execution::Serial).unwrap();
        for (k, u) in out.controls.iter().enumerate() {
            let d = r[0].perturbations[k];
            let expect = lim.clamp(RobotControl::new(nominal[k].a + d.a, nominal[k].omega + d.omega));
            assert_eq!(*u, expect);
        }
    }

    #[test]
    fn equal_costs_give_mean_perturbation() {
        // A zero-weight cost makes every rollout cost the same.
        let cfg = MppiConfig {
            q: [0.0; 4],
            q_final: [0.0; 4],
            r: [0.0; 2],
            ..small_cfg(16)
        };
        let lim = RobotLimits::default();
        let z = RobotState::new(0.0, 0.0, 0.5, 0.0);
        let nominal = vec![RobotControl::ZERO; cfg.horizon];
        let g = goal();
        let r = mppi_rollouts(z, 0.0, &nominal, &g, &CostMap::free(), &cfg, &lim, 0, &Execution::Serial).unwrap();
        let out = mppi_step(z, 0.0, &nominal, &g, &CostMap::free(), &cfg, &lim, 0, &Execution::Serial).unwrap();
        for k in 0..cfg.horizon {
            let ma = r.iter().map(|x| x.perturbations[k].a).sum::<f64>() / 16.0;
            let mw = r.iter().map(|x| x.perturbations[k].omega).sum::<f64>() / 16.0;
            let expect = lim.clamp(RobotControl::new(ma, mw));
            assert_abs_diff_eq!(out.controls[k].a, expect.a, epsilon = 1e-12);
            assert_abs_diff_eq!(out.controls[k].omega, expect.omega, epsilon = 1e-12);
        }
    }

    #[test]
    fn deterministic_across_workers() {
        let cfg = small_cfg(300);
        let lim = RobotLimits::default();
        let z = RobotState::new(0.0, 0.0, 0.0, 0.0);
        let nominal = vec![RobotControl::ZERO; cfg.horizon];
        let g = RobotState::new(1.0, 1.0, 0.0, 0.0);
        let a = mppi_step(z, 0.0, &nominal, &g, &CostMap::free(), &cfg, &lim, 9, &Execution::Serial).unwrap();
        for w in [1, 3] {
            let b = mppi_step(z, 0.0, &nominal, &g, &CostMap::free(), &cfg, &lim, 9, &Execution::parallel(Some(w)))
                .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sequence_cost_matches_zero_perturbation_rollout() {
        let cfg = small_cfg(1);
        let lim = RobotLimits::default();
        let z = RobotState::new(0.0, 0.0, 0.4, 0.2);
        let u = vec![RobotControl::new(0.3, -0.2); cfg.horizon];
        let g = RobotState::new(1.0, 1.0, 0.0, 0.0);
        let (c, states) = sequence_cost(z, 0.0, &u, &g, &CostMap::free(), &cfg, &lim);
        let mut s = z;
        let mut expect = 0.0;
        for (k, uk) in u.iter().enumerate() {
            expect += mppi_cost(&s, uk, k, 0.0, &g, &CostMap::free(), &cfg);
            s = robot_step(s, *uk, cfg.dt_plan, &lim);
        }
        expect += mppi_cost(&s, &RobotControl::ZERO, cfg.horizon, 0.0, &g, &CostMap::free(), &cfg);
        assert_eq!(c, expect);
        assert_eq!(*states.last().unwrap(), s);
    }

    #[test]
    fn shift_repeats_last() {
        let mut u = vec![RobotControl::new(1.0, 0.0), RobotControl::new(0.5, 0.1)];
        shift_nominal(&mut u);
        assert_eq!(u, vec![RobotControl::new(0.5, 0.1); 2]);
    }

    proptest! {
        #[test]
        fn weights_shift_invariant(costs in prop::collection::vec(0.0f64..50.0, 1..40), c in -1e3f64..1e3, tau in 0.1f64..10.0) {
            let a = mppi_weights(&costs, tau).unwrap();
            let shifted: Vec<f64> = costs.iter().map(|x| x + c).collect();
            let b = mppi_weights(&shifted, tau).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn controls_within_bounds(seed in 0u64..1000, a in -5.0f64..5.0, w in -5.0f64..5.0) {
            let cfg = MppiConfig { seed, ..small_cfg(32) };
            let lim = RobotLimits::default();
            let z = RobotState::new(0.0, 0.0, 0.3, 0.0);
            let nominal = vec![RobotControl::new(a, w); cfg.horizon];
            let out = mppi_step(z, 0.0, &nominal, &RobotState::new(3.0, -1.0, 0.0, 1.0), &CostMap::free(), &cfg, &lim, 0, &Execution::Serial).unwrap();
            prop_assert!(out.controls.iter().all(|u| lim.admits(u)));
        }
    }
}
