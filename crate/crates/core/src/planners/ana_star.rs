//! Anytime Nonparametric A* over a time-expanded grid.
//!
//! Search states are `(cell, step)` pairs. Each move (8-connected, or a wait)
//! advances time by `dt_plan`; the occupancy layer at the landing time decides
//! the collision penalty. Once the landing time passes the last prediction
//! layer the step index saturates, since every later layer is identical.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::PlanError;
use crate::occupancy::{CollisionField, OccupancyGrid};
use crate::predictor::PredictionStack;

use super::{Path, Waypoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnaStarConfig {
    pub dt_plan: f64,
    pub time_limit_s: f64,
    pub collision_radius_m: f64,
    pub collision_threshold: f64,
    pub collision_penalty: f64,
    pub allow_wait: bool,
    /// Expansion budget; 0 means unlimited. Unlike the wall-clock limit this
    /// keeps results machine-independent.
    pub max_expansions: usize,
}

impl Default for AnaStarConfig {
    fn default() -> Self {
        Self {
            dt_plan: 0.1,
            time_limit_s: 0.1,
            collision_radius_m: 0.25,
            collision_threshold: 0.1,
            collision_penalty: 1000.0,
            allow_wait: true,
            max_expansions: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    /// Search exhausted; the returned path is optimal.
    Optimal,
    /// Time limit hit; the returned path is the best found so far.
    TimeLimited,
    /// No path at all (static obstacles or time limit before any solution).
    NoPath,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub path: Path,
    pub cost: f64,
    pub status: PlanStatus,
    /// Whether the path avoids every collision penalty.
    pub collision_free: bool,
    /// Costs of successive solutions, in the order they were found.
    pub solutions: Vec<f64>,
    /// Suboptimality bound `E` after each solution.
    pub bounds: Vec<f64>,
    pub expansions: usize,
}

impl PlanResult {
    pub fn found(&self) -> bool {
        self.status != PlanStatus::NoPath
    }
}

/// The time-expanded search graph shared by the planner and its callers.
pub struct TimeGrid<'a> {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    blocked: &'a [f64],
    collides: Vec<Vec<bool>>,
    step_layer: Vec<usize>,
    start_time: f64,
    cfg: AnaStarConfig,
}

const MOVES: [(i64, i64); 9] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
    (0, 0),
];

impl<'a> TimeGrid<'a> {
    pub fn new(
        stack: &PredictionStack,
        static_mask: &'a OccupancyGrid,
        start_time: f64,
        cfg: AnaStarConfig,
    ) -> Result<Self, PlanError> {
        if !(cfg.dt_plan > 0.0) {
            return Err(PlanError::InvalidConfig("dt_plan must be > 0"));
        }
        if *static_mask.spec() != stack.spec {
            return Err(PlanError::InvalidConfig("static mask and stack grids differ"));
        }
        let collides = stack
            .layers
            .iter()
            .map(|l| {
                let f = CollisionField::new(l, cfg.collision_radius_m);
                (0..stack.spec.len())
                    .map(|i| f.at_index(i) >= cfg.collision_threshold)
                    .collect()
            })
            .collect();
        let last = stack.steps() - 1;
        let mut step_layer = Vec::new();
        let mut k = 0usize;
        loop {
            let l = stack.layer_at(start_time + k as f64 * cfg.dt_plan);
            step_layer.push(l);
            if l == last {
                break;
            }
            k += 1;
        }
        Ok(Self {
            width: stack.spec.width,
            height: stack.spec.height,
            resolution: stack.spec.resolution,
            origin: stack.spec.origin,
            blocked: static_mask.values(),
            collides,
            step_layer,
            start_time,
            cfg,
        })
    }

    fn cells(&self) -> usize {
        self.width * self.height
    }

    fn max_step(&self) -> usize {
        self.step_layer.len() - 1
    }

    fn state(&self, cell: usize, step: usize) -> usize {
        step * self.cells() + cell
    }

    fn split(&self, state: usize) -> (usize, usize) {
        (state % self.cells(), state / self.cells())
    }

    fn is_blocked(&self, cell: usize) -> bool {
        self.blocked[cell] > 0.5
    }

    /// Admissible time-to-go: straight-line distance in cells times `dt_plan`.
    fn heuristic(&self, cell: usize, goal: usize) -> f64 {
        let (x, y) = ((cell % self.width) as f64, (cell / self.width) as f64);
        let (gx, gy) = ((goal % self.width) as f64, (goal / self.width) as f64);
        (x - gx).hypot(y - gy) * self.cfg.dt_plan
    }

    fn successors(&self, state: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let (cell, step) = self.split(state);
        let next_step = (step + 1).min(self.max_step());
        let layer = self.step_layer[next_step];
        let (x, y) = ((cell % self.width) as i64, (cell / self.width) as i64);
        for &(dx, dy) in &MOVES {
            if dx == 0 && dy == 0 && !self.cfg.allow_wait {
                continue;
            }
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
                continue;
            }
            let nc = ny as usize * self.width + nx as usize;
            if self.is_blocked(nc) {
                continue;
            }
            let base = if dx != 0 && dy != 0 {
                std::f64::consts::SQRT_2 * self.cfg.dt_plan
            } else {
                self.cfg.dt_plan
            };
            let penalty = if self.collides[layer][nc] {
                self.cfg.collision_penalty
            } else {
                0.0
            };
            out.push((self.state(nc, next_step), base + penalty));
        }
    }

    fn cell_center(&self, cell: usize) -> [f64; 2] {
        [
            self.origin[0] + ((cell % self.width) as f64 + 0.5) * self.resolution,
            self.origin[1] + ((cell / self.width) as f64 + 0.5) * self.resolution,
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    key: f64,
    g: f64,
    state: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| other.state.cmp(&self.state))
    }
}

/// ANA* search from `start` (cell coordinates at `start_time`) to `goal`.
pub fn ana_star(
    stack: &PredictionStack,
    static_mask: &OccupancyGrid,
    start: (usize, usize),
    start_time: f64,
    goal: (usize, usize),
    cfg: &AnaStarConfig,
) -> Result<PlanResult, PlanError> {
    if !(cfg.time_limit_s > 0.0) {
        return Err(PlanError::InvalidConfig("time_limit_s must be > 0"));
    }
    let spec = stack.spec;
    if start.0 >= spec.width || start.1 >= spec.height || goal.0 >= spec.width || goal.1 >= spec.height {
        return Err(PlanError::OutOfBounds);
    }
    let grid = TimeGrid::new(stack, static_mask, start_time, *cfg)?;
    let clock = Instant::now();
    let start_cell = spec.index(start.0, start.1);
    let goal_cell = spec.index(goal.0, goal.1);
    let n_states = grid.cells() * (grid.max_step() + 1);

    let mut g = vec![f64::INFINITY; n_states];
    let mut parent = vec![usize::MAX; n_states];
    let mut in_open = vec![false; n_states];
    let mut open = BinaryHeap::new();
    let mut best_g = f64::INFINITY; // G
    let mut bound = f64::INFINITY; // E
    let mut result = PlanResult {
        path: Path::default(),
        cost: f64::INFINITY,
        status: PlanStatus::NoPath,
        collision_free: false,
        solutions: Vec::new(),
        bounds: Vec::new(),
        expansions: 0,
    };

    let key = |gs: f64, h: f64, best: f64| -> f64 {
        if best.is_infinite() {
            -h
        } else if h == 0.0 {
            f64::INFINITY
        } else {
            (best - gs) / h
        }
    };

    let s0 = grid.state(start_cell, 0);
    g[s0] = 0.0;
    in_open[s0] = true;
    open.push(Entry {
        key: key(0.0, grid.heuristic(start_cell, goal_cell), best_g),
        g: 0.0,
        state: s0,
    });

    let mut succ = Vec::with_capacity(9);
    let mut timed_out = false;
    'outer: while !open.is_empty() {
        // ImproveSolution
        let mut improved = false;
        while let Some(e) = open.pop() {
            if !in_open[e.state] || e.g != g[e.state] {
                continue;
            }
            in_open[e.state] = false;
            result.expansions += 1;
            let over_budget = cfg.max_expansions > 0 && result.expansions > cfg.max_expansions;
            if over_budget
                || (result.expansions % 256 == 0 && clock.elapsed().as_secs_f64() > cfg.time_limit_s)
            {
                timed_out = true;
                break 'outer;
            }
            let (cell, _) = grid.split(e.state);
            let h = grid.heuristic(cell, goal_cell);
            let es = key(g[e.state], h, best_g);
            if best_g.is_finite() && es < bound {
                bound = es;
            }
            if cell == goal_cell {
                best_g = g[e.state];
                result.path = reconstruct(&grid, &parent, e.state);
                result.cost = best_g;
                result.solutions.push(best_g);
                result.bounds.push(bound);
                improved = true;
                break;
            }
            grid.successors(e.state, &mut succ);
            for &(s, c) in &succ {
                let ng = g[e.state] + c;
                if ng < g[s] {
                    g[s] = ng;
                    parent[s] = e.state;
                    let hs = grid.heuristic(grid.split(s).0, goal_cell);
                    if ng + hs < best_g {
                        in_open[s] = true;
                        open.push(Entry {
                            key: key(ng, hs, best_g),
                            g: ng,
                            state: s,
                        });
                    }
                }
            }
        }
        if !improved {
            break;
        }
        // Re-key OPEN for the new G and prune states that cannot improve it.
        // Pushes only happen on a strict g decrease, so at most one entry per
        // state is current.
        let mut rebuilt = BinaryHeap::with_capacity(open.len());
        for e in std::mem::take(&mut open).into_vec() {
            if !in_open[e.state] || e.g != g[e.state] {
                continue;
            }
            let hs = grid.heuristic(grid.split(e.state).0, goal_cell);
            if e.g + hs < best_g {
                rebuilt.push(Entry {
                    key: key(e.g, hs, best_g),
                    ..e
                });
            } else {
                in_open[e.state] = false;
            }
        }
        open = rebuilt;
    }

    if !result.solutions.is_empty() {
        result.status = if timed_out {
            PlanStatus::TimeLimited
        } else {
            PlanStatus::Optimal
        };
        result.collision_free = result.cost < cfg.collision_penalty;
    }
    Ok(result)
}

fn reconstruct(grid: &TimeGrid<'_>, parent: &[usize], mut state: usize) -> Path {
    let mut rev = vec![grid.split(state).0];
    while parent[state] != usize::MAX {
        state = parent[state];
        rev.push(grid.split(state).0);
    }
    rev.reverse();
    let waypoints = rev
        .iter()
        .enumerate()
        .map(|(k, &cell)| {
            let c = grid.cell_center(cell);
            Waypoint {
                x: c[0],
                y: c[1],
                t: grid.start_time + k as f64 * grid.cfg.dt_plan,
            }
        })
        .collect();
    Path { waypoints }
}
