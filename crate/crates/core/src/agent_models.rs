//! Human and robot motion models.
//!
//! Humans follow a 2D kinematic model `ż = (v cos θ, v sin θ)` with a finite,
//! bounded control set and act according to a noisy-rational (Boltzmann)
//! policy over a utility `Q_H`. The robot is a 4D Dubins car with state
//! `(x, y, v, θ)` and controls `(a, ω)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Displacement below which two consecutive observations are treated as the
/// same position when recovering controls.
pub const STATIONARY_EPSILON_M: f64 = 1e-6;

/// Wraps an angle into `[-π, π)`.
#[inline]
pub fn wrap_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Absolute angular difference on the circle, in `[0, π]`.
#[inline]
pub fn angle_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanState {
    pub x: f64,
    pub y: f64,
}

impl HumanState {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &HumanState) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq_to(&self, p: [f64; 2]) -> f64 {
        let dx = self.x - p[0];
        let dy = self.y - p[1];
        dx * dx + dy * dy
    }
}

/// Human control `u = (v, θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub v: f64,
    pub theta: f64,
}

impl ControlAction {
    pub fn new(v: f64, theta: f64) -> Self {
        Self {
            v,
            theta: wrap_angle(theta),
        }
    }
}

/// Discrete, bounded human control set `𝒰`.
///
/// Caches the per-action velocity vectors since they are evaluated for every
/// particle at every prediction step.
#[derive(Debug, Clone)]
pub struct ControlSet {
    actions: Vec<ControlAction>,
    velocities: Vec<[f64; 2]>,
    speed_spacing: f64,
    heading_spacing: f64,
    v_max: f64,
}

impl ControlSet {
    /// Builds a control set from an explicit action list.
    pub fn new(actions: Vec<ControlAction>) -> Result<Self, ModelError> {
        if actions.is_empty() {
            return Err(ModelError::EmptyControlSet);
        }
        let mut normalized = Vec::with_capacity(actions.len());
        for a in actions {
            if !(a.v.is_finite() && a.theta.is_finite()) || a.v < 0.0 {
                return Err(ModelError::InvalidAction { v: a.v, theta: a.theta });
            }
            let a = ControlAction::new(a.v, a.theta);
            if normalized
                .iter()
                .any(|b: &ControlAction| same_motion(b, &a))
            {
                return Err(ModelError::DuplicateAction { v: a.v, theta: a.theta });
            }
            normalized.push(a);
        }
        let speed_spacing = min_gap(normalized.iter().map(|a| a.v), None);
        let heading_spacing = min_gap(
            normalized.iter().filter(|a| a.v > 0.0).map(|a| a.theta),
            Some(2.0 * PI),
        );
        let v_max = normalized.iter().map(|a| a.v).fold(0.0, f64::max);
        let velocities = normalized
            .iter()
            .map(|a| [a.v * a.theta.cos(), a.v * a.theta.sin()])
            .collect();
        Ok(Self {
            actions: normalized,
            velocities,
            speed_spacing,
            heading_spacing,
            v_max,
        })
    }

    /// Cartesian product of `n_speeds` speed levels `v_max·k/n_speeds`
    /// (k = 1..n_speeds) and `n_headings` headings evenly spaced from `-π`.
    /// With `include_stop`, a single zero-speed action is prepended.
    pub fn grid(
        n_speeds: usize,
        n_headings: usize,
        v_max: f64,
        include_stop: bool,
    ) -> Result<Self, ModelError> {
        if n_speeds == 0 || n_headings == 0 || !(v_max > 0.0) {
            return Err(ModelError::EmptyControlSet);
        }
        let mut actions = Vec::with_capacity(n_speeds * n_headings + 1);
        if include_stop {
            actions.push(ControlAction::new(0.0, 0.0));
        }
        for i in 1..=n_speeds {
            let v = v_max * i as f64 / n_speeds as f64;
            for j in 0..n_headings {
                let theta = -PI + 2.0 * PI * j as f64 / n_headings as f64;
                actions.push(ControlAction::new(v, theta));
            }
        }
        Self::new(actions)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn actions(&self) -> &[ControlAction] {
        &self.actions
    }

    pub fn get(&self, idx: usize) -> ControlAction {
        self.actions[idx]
    }

    /// `(v cos θ, v sin θ)` for every action.
    pub fn velocities(&self) -> &[[f64; 2]] {
        &self.velocities
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// Maximum distance from any in-range control to its nearest action under
    /// [`ControlSet::snap_metric`]; half the speed spacing plus half the
    /// heading spacing.
    pub fn snap_tolerance(&self) -> f64 {
        0.5 * (self.speed_spacing + self.heading_spacing)
    }

    /// Speed difference plus angular difference, ignoring heading when either
    /// action is a stop.
    pub fn snap_metric(a: &ControlAction, b: &ControlAction) -> f64 {
        let dv = (a.v - b.v).abs();
        if a.v == 0.0 || b.v == 0.0 {
            dv
        } else {
            dv + angle_distance(a.theta, b.theta)
        }
    }

    /// Index of the nearest action and its distance under the snap metric.
    /// Ties resolve to the lowest index.
    pub fn nearest(&self, u: &ControlAction) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, a) in self.actions.iter().enumerate() {
            let d = Self::snap_metric(u, a);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }
}

fn same_motion(a: &ControlAction, b: &ControlAction) -> bool {
    if a.v == 0.0 && b.v == 0.0 {
        return true;
    }
    a.v == b.v && angle_distance(a.theta, b.theta) < 1e-12
}

fn min_gap(values: impl Iterator<Item = f64>, default: Option<f64>) -> f64 {
    let mut vs: Vec<f64> = values.collect();
    vs.sort_by(f64::total_cmp);
    vs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let gap = vs
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if gap.is_finite() {
        gap
    } else {
        default.unwrap_or_else(|| vs.first().copied().unwrap_or(0.0))
    }
}

/// Candidate human goals `𝒢`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSet {
    goals: Vec<[f64; 2]>,
}

impl GoalSet {
    pub fn new(goals: Vec<[f64; 2]>) -> Result<Self, ModelError> {
        if goals.is_empty() {
            return Err(ModelError::EmptyGoalSet);
        }
        if goals.iter().any(|g| !(g[0].is_finite() && g[1].is_finite())) {
            return Err(ModelError::NonFiniteGoal);
        }
        Ok(Self { goals })
    }

    /// Checks that every goal lies in `[x0, x1] × [y0, y1]`.
    pub fn check_bounds(&self, min: [f64; 2], max: [f64; 2]) -> Result<(), ModelError> {
        for (i, g) in self.goals.iter().enumerate() {
            if g[0] < min[0] || g[0] > max[0] || g[1] < min[1] || g[1] > max[1] {
                return Err(ModelError::GoalOutOfBounds { index: i });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn get(&self, idx: usize) -> [f64; 2] {
        self.goals[idx]
    }

    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.goals
    }
}

/// Candidate rationality coefficients `ℬ`, strictly positive and increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalitySet {
    betas: Vec<f64>,
}

impl RationalitySet {
    pub fn new(betas: Vec<f64>) -> Result<Self, ModelError> {
        if betas.is_empty() {
            return Err(ModelError::EmptyRationalitySet);
        }
        if betas.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(ModelError::NonPositiveBeta);
        }
        if betas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ModelError::UnsortedBetas);
        }
        Ok(Self { betas })
    }

    /// `count` values evenly spaced in log space between `lo` and `hi`.
    pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Result<Self, ModelError> {
        if count == 1 {
            return Self::new(vec![lo]);
        }
        let (a, b) = (lo.ln(), hi.ln());
        let betas = (0..count)
            .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
            .collect();
        Self::new(betas)
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.betas[idx]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.betas
    }
}

/// Signature of a user-supplied utility `(z, u, goal) -> Q`.
pub type UtilityFn = dyn Fn(HumanState, ControlAction, [f64; 2]) -> f64 + Send + Sync;

/// How the state term of `Q_H` is evaluated.
#[derive(Clone)]
pub enum UtilityModel {
    /// `−‖z − g‖² − ‖u‖²_w`, literally as in the running example. The state
    /// term does not depend on `u`, so the resulting policy is identical for
    /// every goal.
    GoalDistance,
    /// `−‖z + f(z, u)·horizon − g‖² − ‖u‖²_w`: the distance term is evaluated
    /// at the state one `horizon_s` Euler step ahead.
    Lookahead { horizon_s: f64 },
    Custom(Arc<UtilityFn>),
}

impl fmt::Debug for UtilityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GoalDistance => f.write_str("GoalDistance"),
            Self::Lookahead { horizon_s } => write!(f, "Lookahead({horizon_s})"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// The human utility `Q_H(z, u; g)` over a fixed goal set, with an optional
/// per-action `−∞` mask.
#[derive(Debug, Clone)]
pub struct QFunction {
    goals: GoalSet,
    model: UtilityModel,
    control_weights: [f64; 2],
    mask: Option<Arc<[bool]>>,
}

impl QFunction {
    /// Literal running-example utility with unit control weights.
    pub fn goal_distance(goals: GoalSet) -> Self {
        Self {
            goals,
            model: UtilityModel::GoalDistance,
            control_weights: [1.0, 1.0],
            mask: None,
        }
    }

    pub fn lookahead(goals: GoalSet, horizon_s: f64) -> Self {
        Self {
            goals,
            model: UtilityModel::Lookahead { horizon_s },
            control_weights: [1.0, 1.0],
            mask: None,
        }
    }

    pub fn custom(goals: GoalSet, f: Arc<UtilityFn>) -> Self {
        Self {
            goals,
            model: UtilityModel::Custom(f),
            control_weights: [1.0, 1.0],
            mask: None,
        }
    }

    /// Weights `(w_v, w_θ)` on the `‖u‖²` term.
    pub fn with_control_weights(mut self, weights: [f64; 2]) -> Self {
        self.control_weights = weights;
        self
    }

    /// Replaces the action mask; `true` entries evaluate to `−∞`.
    pub fn with_mask(mut self, mask: Option<Vec<bool>>) -> Self {
        self.mask = mask.map(Into::into);
        self
    }

    pub fn goals(&self) -> &GoalSet {
        &self.goals
    }

    pub fn model(&self) -> &UtilityModel {
        &self.model
    }

    pub fn control_weights(&self) -> [f64; 2] {
        self.control_weights
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_masked(&self, action_idx: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m[action_idx])
    }

    #[inline]
    fn control_penalty(&self, u: &ControlAction) -> f64 {
        self.control_weights[0] * u.v * u.v + self.control_weights[1] * u.theta * u.theta
    }

    /// Unmasked utility of action `u` toward goal `goal_idx`.
    pub fn raw_value(&self, z: HumanState, u: ControlAction, goal_idx: usize) -> f64 {
        let g = self.goals.get(goal_idx);
        match &self.model {
            UtilityModel::GoalDistance => -z.distance_sq_to(g) - self.control_penalty(&u),
            UtilityModel::Lookahead { horizon_s } => {
                let next = human_step(z, u, *horizon_s);
                -next.distance_sq_to(g) - self.control_penalty(&u)
            }
            UtilityModel::Custom(f) => f(z, u, g),
        }
    }

    /// Utility of action `action_idx` of `controls`, honoring the mask.
    pub fn value(
        &self,
        z: HumanState,
        controls: &ControlSet,
        action_idx: usize,
        goal_idx: usize,
    ) -> f64 {
        if self.is_masked(action_idx) {
            return f64::NEG_INFINITY;
        }
        self.raw_value(z, controls.get(action_idx), goal_idx)
    }

    /// Fills `out[i] = Q(z, u_i; g)` for every action of `controls`.
    pub fn fill_values(&self, z: HumanState, goal_idx: usize, controls: &ControlSet, out: &mut [f64]) {
        debug_assert_eq!(out.len(), controls.len());
        let g = self.goals.get(goal_idx);
        match &self.model {
            UtilityModel::Lookahead { horizon_s } => {
                let h = *horizon_s;
                let (cx, cy) = (z.x - g[0], z.y - g[1]);
                for ((o, vel), a) in out
                    .iter_mut()
                    .zip(controls.velocities())
                    .zip(controls.actions())
                {
                    let dx = cx + vel[0] * h;
                    let dy = cy + vel[1] * h;
                    *o = -(dx * dx + dy * dy) - self.control_penalty(a);
                }
            }
            _ => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = self.raw_value(z, controls.get(i), goal_idx);
                }
            }
        }
        if let Some(mask) = &self.mask {
            for (o, m) in out.iter_mut().zip(mask.iter()) {
                if *m {
                    *o = f64::NEG_INFINITY;
                }
            }
        }
    }
}

/// One forward-Euler step of the human kinematics.
#[inline]
pub fn human_step(z: HumanState, u: ControlAction, dt: f64) -> HumanState {
    HumanState {
        x: z.x + u.v * u.theta.cos() * dt,
        y: z.y + u.v * u.theta.sin() * dt,
    }
}

/// Recovers the control that moved the human from `z_t` to `z_next` in `dt`.
///
/// Coincident observations yield a zero-speed action with `fallback_theta`.
pub fn recover_control(
    z_t: HumanState,
    z_next: HumanState,
    dt: f64,
    fallback_theta: f64,
) -> ControlAction {
    let dx = z_next.x - z_t.x;
    let dy = z_next.y - z_t.y;
    let dist = dx.hypot(dy);
    if dist < STATIONARY_EPSILON_M {
        ControlAction::new(0.0, fallback_theta)
    } else {
        ControlAction::new(dist / dt, dy.atan2(dx))
    }
}

/// Running-example utility `−‖z − g‖² − (v² + θ²)`.
pub fn q_default(z: HumanState, u: ControlAction, g: [f64; 2]) -> f64 {
    -z.distance_sq_to(g) - (u.v * u.v + u.theta * u.theta)
}

/// Numerically stable `log Σ exp(x_i)`; `−∞` for empty or all-`−∞` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Boltzmann policy `π(· | z; β, g)` over `controls`.
pub fn boltzmann_policy(
    z: HumanState,
    beta: f64,
    goal_idx: usize,
    controls: &ControlSet,
    q: &QFunction,
) -> Result<Vec<f64>, ModelError> {
    let mut out = vec![0.0; controls.len()];
    q.fill_values(z, goal_idx, controls, &mut out);
    softmax_in_place(&mut out, beta)?;
    Ok(out)
}

/// Log-probabilities `log π(· | z; β, g)`; masked actions are `−∞`.
pub fn boltzmann_log_policy(
    z: HumanState,
    beta: f64,
    goal_idx: usize,
    controls: &ControlSet,
    q: &QFunction,
) -> Result<Vec<f64>, ModelError> {
    let mut out = vec![0.0; controls.len()];
    q.fill_values(z, goal_idx, controls, &mut out);
    for o in out.iter_mut() {
        *o *= beta;
    }
    let lse = logsumexp(&out);
    if lse == f64::NEG_INFINITY {
        return Err(ModelError::NoUnmaskedAction);
    }
    for o in out.iter_mut() {
        *o -= lse;
    }
    Ok(out)
}

/// Replaces utilities with `softmax(β·Q)` using a max shift.
pub fn softmax_in_place(values: &mut [f64], beta: f64) -> Result<(), ModelError> {
    let m = values
        .iter()
        .map(|q| beta * q)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(ModelError::NoUnmaskedAction);
    }
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (beta * *v - m).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

/// Dubins car state `(x, y, v, θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, v: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            v,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Dubins car control: acceleration and steering rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotControl {
    pub a: f64,
    pub omega: f64,
}

impl RobotControl {
    pub const ZERO: Self = Self { a: 0.0, omega: 0.0 };

    pub fn new(a: f64, omega: f64) -> Self {
        Self { a, omega }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotLimits {
    pub v_max: f64,
    pub a_max: f64,
    pub omega_max: f64,
}

impl Default for RobotLimits {
    fn default() -> Self {
        Self {
            v_max: 1.1,
            a_max: 1.0,
            omega_max: 1.0,
        }
    }
}

impl RobotLimits {
    pub fn clamp(&self, u: RobotControl) -> RobotControl {
        RobotControl {
            a: u.a.clamp(-self.a_max, self.a_max),
            omega: u.omega.clamp(-self.omega_max, self.omega_max),
        }
    }

    pub fn admits(&self, u: &RobotControl) -> bool {
        u.a.abs() <= self.a_max && u.omega.abs() <= self.omega_max
    }
}

/// One Euler step of the Dubins dynamics: clamp inputs, integrate with the
/// pre-step heading and speed, then clamp `v` to `[0, v_max]` and wrap `θ`.
#[inline]
pub fn robot_step(z: RobotState, u: RobotControl, dt: f64, limits: &RobotLimits) -> RobotState {
    let u = limits.clamp(u);
    let (s, c) = z.theta.sin_cos();
    RobotState {
        x: z.x + z.v * c * dt,
        y: z.y + z.v * s * dt,
        v: (z.v + u.a * dt).clamp(0.0, limits.v_max),
        theta: wrap_angle(z.theta + u.omega * dt),
    }
}
