//! Particle-based occupancy prediction.
//!
//! A batch of particles starts at the latest observed state. Each particle
//! draws one `(β, g)` hypothesis from the current joint belief, which stays
//! fixed for the whole horizon (the belief is bootstrapped, not re-updated).
//! At every step each particle samples an action from its own Boltzmann
//! policy and moves; the batch is then counted onto a fresh grid and
//! smoothed. Particle positions themselves stay continuous.
//!
//! [`exact_predict`] enumerates the same process exhaustively and serves as
//! the reference for the Monte-Carlo path.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent_models::{boltzmann_policy, human_step, ControlSet, HumanState, QFunction};
use crate::belief::{HypothesisSpace, JointBelief};
use crate::error::PredictError;
use crate::exec::{Execution, CHUNK_SIZE};
use crate::occupancy::{
    gaussian_smooth, grid_from_counts, union_independent, union_max, GridSpec, OccupancyGrid,
};
use crate::rng::{stream, Domain};

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleBatch {
    pub states: Vec<HumanState>,
    pub hypothesis_idx: Vec<u32>,
}

impl ParticleBatch {
    /// `n` copies of `z`, all carrying hypothesis indices from `hypotheses`.
    pub fn replicate(z: HumanState, hypotheses: Vec<u32>) -> Self {
        Self {
            states: vec![z; hypotheses.len()],
            hypothesis_idx: hypotheses,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionConfig {
    pub samples: usize,
    pub steps: usize,
    pub dt_s: f64,
    pub smoothing_sigma_m: f64,
    pub seed: u64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            samples: 8192,
            steps: 6,
            dt_s: 0.5,
            smoothing_sigma_m: 0.05,
            seed: 0,
        }
    }
}

impl PredictionConfig {
    pub fn validate(&self) -> Result<(), PredictError> {
        if self.samples == 0 {
            return Err(PredictError::InvalidConfig("samples must be >= 1"));
        }
        if self.steps == 0 {
            return Err(PredictError::InvalidConfig("steps must be >= 1"));
        }
        if !(self.dt_s > 0.0) {
            return Err(PredictError::InvalidConfig("dt_s must be > 0"));
        }
        if !(self.smoothing_sigma_m >= 0.0) {
            return Err(PredictError::InvalidConfig("smoothing_sigma_m must be >= 0"));
        }
        Ok(())
    }
}

/// `T` occupancy layers; layer `k` describes time `base_time + (k + 1)·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionStack {
    pub spec: GridSpec,
    pub layers: Vec<OccupancyGrid>,
    pub base_time: f64,
    pub dt: f64,
    /// Particles clamped onto the border, per layer.
    pub clamped: Vec<usize>,
}

impl PredictionStack {
    /// A stack with `steps` all-zero layers.
    pub fn empty(spec: GridSpec, steps: usize, base_time: f64, dt: f64) -> Self {
        Self {
            spec,
            layers: vec![OccupancyGrid::zeros(spec); steps],
            base_time,
            dt,
            clamped: vec![0; steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.layers.len()
    }

    /// Layer describing absolute time `t`: the first layer at or after `t`,
    /// saturating at both ends (times past the horizon reuse the last layer).
    pub fn layer_at(&self, t: f64) -> usize {
        layer_index(self.base_time, self.dt, self.layers.len(), t)
    }
}

/// Index of the layer describing time `t` in a stack of `steps` layers.
pub fn layer_index(base_time: f64, dt: f64, steps: usize, t: f64) -> usize {
    let k = ((t - base_time) / dt - 1e-9).ceil() - 1.0;
    if k <= 0.0 {
        0
    } else {
        (k as usize).min(steps - 1)
    }
}

/// Draws `n` i.i.d. hypothesis indices from the belief.
pub fn sample_hypotheses(b: &JointBelief, n: usize, seed: u64, exec: &Execution) -> Vec<u32> {
    let cdf = cumulative(&b.probabilities());
    let mut out = vec![0u32; n];
    let fill = |(chunk, dst): (usize, &mut [u32])| {
        let mut rng = stream(seed, Domain::Hypotheses, 0, chunk as u64);
        for d in dst.iter_mut() {
            *d = draw_index(&cdf, rng.random::<f64>()) as u32;
        }
    };
    match exec {
        Execution::Serial => out.chunks_mut(CHUNK_SIZE).enumerate().for_each(fill),
        Execution::Parallel(pool) => pool.install(|| {
            out.par_chunks_mut(CHUNK_SIZE).enumerate().for_each(fill)
        }),
    }
    out
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// First index whose cumulative weight exceeds `u·total`; zero-weight
/// entries are never selected.
#[inline]
fn draw_index(cdf: &[f64], u: f64) -> usize {
    let target = u * cdf[cdf.len() - 1];
    let i = cdf.partition_point(|c| *c <= target);
    i.min(cdf.len() - 1)
}

/// Per-worker scratch for action sampling.
struct PolicySampler<'a> {
    controls: &'a ControlSet,
    q: &'a QFunction,
    h: &'a HypothesisSpace,
    buf: Vec<f64>,
}

impl<'a> PolicySampler<'a> {
    fn new(controls: &'a ControlSet, q: &'a QFunction, h: &'a HypothesisSpace) -> Self {
        Self {
            controls,
            q,
            h,
            buf: vec![0.0; controls.len()],
        }
    }

    /// Samples an action index from `π(· | z; β, g)` by inverse CDF.
    #[inline]
    fn sample(&mut self, z: HumanState, hypothesis: usize, u: f64) -> usize {
        let beta = self.h.beta(hypothesis);
        let goal = self.h.goal_index(hypothesis);
        self.q.fill_values(z, goal, self.controls, &mut self.buf);
        let m = self
            .buf
            .iter()
            .fold(f64::NEG_INFINITY, |m, q| m.max(beta * q));
        let mut acc = 0.0;
        for v in self.buf.iter_mut() {
            acc += (beta * *v - m).exp();
            *v = acc;
        }
        draw_index(&self.buf, u)
    }
}

#[allow(clippy::too_many_arguments)]
fn propagate_chunk(
    sampler: &mut PolicySampler<'_>,
    states: &mut [HumanState],
    hyps: &[u32],
    cells: Option<&mut [u32]>,
    spec: Option<&GridSpec>,
    dt: f64,
    seed: u64,
    step: u64,
    chunk: usize,
) -> usize {
    let mut rng = stream(seed, Domain::Propagation, step, chunk as u64);
    for (z, &hyp) in states.iter_mut().zip(hyps) {
        let a = sampler.sample(*z, hyp as usize, rng.random::<f64>());
        let vel = sampler.controls.velocities()[a];
        z.x += vel[0] * dt;
        z.y += vel[1] * dt;
    }
    let (Some(cells), Some(spec)) = (cells, spec) else {
        return 0;
    };
    let mut clamped = 0;
    for (c, z) in cells.iter_mut().zip(states.iter()) {
        let hit = spec.clamped_index(z.x, z.y);
        *c = hit.index as u32;
        clamped += hit.clamped as usize;
    }
    clamped
}

/// Moves every particle one step in place. When `spec` is given, also
/// records each particle's landing cell and returns the clamped count.
#[allow(clippy::too_many_arguments)]
fn propagate_in_place(
    batch: &mut ParticleBatch,
    cells: &mut [u32],
    spec: Option<&GridSpec>,
    controls: &ControlSet,
    q: &QFunction,
    h: &HypothesisSpace,
    dt: f64,
    seed: u64,
    step: u64,
    exec: &Execution,
) -> usize {
    let track = spec.is_some();
    match exec {
        Execution::Serial => {
            let mut sampler = PolicySampler::new(controls, q, h);
            let mut cell_chunks = cells.chunks_mut(CHUNK_SIZE);
            batch
                .states
                .chunks_mut(CHUNK_SIZE)
                .zip(batch.hypothesis_idx.chunks(CHUNK_SIZE))
                .enumerate()
                .map(|(i, (s, hy))| {
                    let c = if track { cell_chunks.next() } else { None };
                    propagate_chunk(&mut sampler, s, hy, c, spec, dt, seed, step, i)
                })
                .sum()
        }
        Execution::Parallel(pool) => pool.install(|| {
            let hyps = &batch.hypothesis_idx;
            if track {
                batch
                    .states
                    .par_chunks_mut(CHUNK_SIZE)
                    .zip(cells.par_chunks_mut(CHUNK_SIZE))
                    .enumerate()
                    .map_init(
                        || PolicySampler::new(controls, q, h),
                        |sampler, (i, (s, c))| {
                            let hy = &hyps[i * CHUNK_SIZE..i * CHUNK_SIZE + s.len()];
                            propagate_chunk(sampler, s, hy, Some(c), spec, dt, seed, step, i)
                        },
                    )
                    .sum()
            } else {
                batch
                    .states
                    .par_chunks_mut(CHUNK_SIZE)
                    .enumerate()
                    .map_init(
                        || PolicySampler::new(controls, q, h),
                        |sampler, (i, s)| {
                            let hy = &hyps[i * CHUNK_SIZE..i * CHUNK_SIZE + s.len()];
                            propagate_chunk(sampler, s, hy, None, None, dt, seed, step, i)
                        },
                    )
                    .sum()
            }
        }),
    }
}

/// One propagation step: every particle samples an action from its own
/// hypothesis's policy and takes an Euler step. Hypotheses are unchanged.
#[allow(clippy::too_many_arguments)]
pub fn propagate_step(
    batch: &ParticleBatch,
    controls: &ControlSet,
    q: &QFunction,
    h: &HypothesisSpace,
    dt: f64,
    seed: u64,
    step: u64,
    exec: &Execution,
) -> ParticleBatch {
    let mut out = batch.clone();
    propagate_in_place(&mut out, &mut [], None, controls, q, h, dt, seed, step, exec);
    out
}

/// Counts landing cells into a probability grid.
fn count_cells(cells: &[u32], spec: &GridSpec) -> OccupancyGrid {
    let mut counts = vec![0u32; spec.len()];
    for &c in cells {
        counts[c as usize] += 1;
    }
    grid_from_counts(spec, &counts, cells.len())
}

/// Monte-Carlo occupancy prediction for one human.
#[allow(clippy::too_many_arguments)]
pub fn predict(
    current: HumanState,
    belief: &JointBelief,
    cfg: &PredictionConfig,
    controls: &ControlSet,
    q: &QFunction,
    h: &HypothesisSpace,
    spec: &GridSpec,
    base_time: f64,
    exec: &Execution,
) -> Result<PredictionStack, PredictError> {
    cfg.validate()?;
    let hyps = sample_hypotheses(belief, cfg.samples, cfg.seed, exec);
    let mut batch = ParticleBatch::replicate(current, hyps);
    let mut cells = vec![0u32; cfg.samples];
    let mut layers = Vec::with_capacity(cfg.steps);
    let mut clamped = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let c = propagate_in_place(
            &mut batch,
            &mut cells,
            Some(spec),
            controls,
            q,
            h,
            cfg.dt_s,
            cfg.seed,
            step as u64,
            exec,
        );
        let grid = count_cells(&cells, spec);
        layers.push(gaussian_smooth(&grid, cfg.smoothing_sigma_m));
        clamped.push(c);
    }
    Ok(PredictionStack {
        spec: *spec,
        layers,
        base_time,
        dt: cfg.dt_s,
        clamped,
    })
}

/// Default cap on enumeration work for [`exact_predict`].
pub const DEFAULT_ENUMERATION_CAP: u64 = 50_000_000;

/// Exhaustive evaluation of the bootstrapped prediction: for every
/// hypothesis with nonzero belief, the continuous support of reachable
/// states is enumerated step by step and weighted by `b(β, g)·π(u | z; β, g)`.
#[allow(clippy::too_many_arguments)]
pub fn exact_predict(
    current: HumanState,
    belief: &JointBelief,
    steps: usize,
    dt: f64,
    controls: &ControlSet,
    q: &QFunction,
    h: &HypothesisSpace,
    spec: &GridSpec,
    base_time: f64,
    cap: u64,
) -> Result<PredictionStack, PredictError> {
    let static_size = spec.len() as u64 * controls.len() as u64 * h.len() as u64;
    if static_size > cap {
        return Err(PredictError::CapExceeded {
            needed: static_size,
            cap,
        });
    }
    let probs = belief.probabilities();
    let mut supports: Vec<(usize, Vec<(HumanState, f64)>)> = probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(i, p)| (i, vec![(current, *p)]))
        .collect();
    let mut layers = Vec::with_capacity(steps);
    let mut clamped = Vec::with_capacity(steps);
    let mut work = 0u64;
    for _ in 0..steps {
        work += supports.iter().map(|(_, s)| s.len() as u64).sum::<u64>() * controls.len() as u64;
        if work > cap {
            return Err(PredictError::CapExceeded { needed: work, cap });
        }
        let mut grid = OccupancyGrid::zeros(*spec);
        let mut n_clamped = 0;
        for (hyp, support) in supports.iter_mut() {
            let beta = h.beta(*hyp);
            let goal = h.goal_index(*hyp);
            let mut next: HashMap<(i64, i64), (HumanState, f64)> = HashMap::new();
            let mut order = Vec::new();
            for (z, mass) in support.iter() {
                let pi = boltzmann_policy(*z, beta, goal, controls, q)?;
                for (a, p) in pi.iter().enumerate() {
                    if *p == 0.0 {
                        continue;
                    }
                    let z1 = human_step(*z, controls.get(a), dt);
                    let key = ((z1.x * 1e9).round() as i64, (z1.y * 1e9).round() as i64);
                    next.entry(key)
                        .and_modify(|e| e.1 += mass * p)
                        .or_insert_with(|| {
                            order.push(key);
                            (z1, mass * p)
                        });
                }
            }
            *support = order.iter().map(|k| next[k]).collect();
            for (z, m) in support.iter() {
                let hit = spec.clamped_index(z.x, z.y);
                grid.values_mut()[hit.index] += m;
                n_clamped += hit.clamped as usize;
            }
        }
        layers.push(grid);
        clamped.push(n_clamped);
    }
    Ok(PredictionStack {
        spec: *spec,
        layers,
        base_time,
        dt,
        clamped,
    })
}

/// How per-human layers are merged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnionMode {
    #[default]
    Max,
    Independent,
}

/// Inputs for one tracked human.
#[derive(Debug, Clone, Copy)]
pub struct HumanInput<'a> {
    pub state: HumanState,
    pub belief: &'a JointBelief,
    pub q: &'a QFunction,
}

/// Predicts each human in turn and merges the stacks layer-wise.
#[allow(clippy::too_many_arguments)]
pub fn predict_multi(
    humans: &[HumanInput<'_>],
    cfg: &PredictionConfig,
    controls: &ControlSet,
    h: &HypothesisSpace,
    spec: &GridSpec,
    base_time: f64,
    union: UnionMode,
    exec: &Execution,
) -> Result<PredictionStack, PredictError> {
    if humans.is_empty() {
        return Err(PredictError::NoHumans);
    }
    let stacks = humans
        .iter()
        .map(|hu| predict(hu.state, hu.belief, cfg, controls, hu.q, h, spec, base_time, exec))
        .collect::<Result<Vec<_>, _>>()?;
    merge_stacks(&stacks, union)
}

/// Layer-wise union of stacks sharing spec and timing.
pub fn merge_stacks(stacks: &[PredictionStack], union: UnionMode) -> Result<PredictionStack, PredictError> {
    let first = stacks.first().ok_or(PredictError::NoHumans)?;
    if stacks.len() == 1 {
        return Ok(first.clone());
    }
    let mut layers = Vec::with_capacity(first.steps());
    for k in 0..first.steps() {
        let grids: Vec<&OccupancyGrid> = stacks.iter().map(|s| &s.layers[k]).collect();
        layers.push(match union {
            UnionMode::Max => union_max(&grids)?,
            UnionMode::Independent => union_independent(&grids)?,
        });
    }
    Ok(PredictionStack {
        spec: first.spec,
        layers,
        base_time: first.base_time,
        dt: first.dt,
        clamped: (0..first.steps())
            .map(|k| stacks.iter().map(|s| s.clamped[k]).sum())
            .collect(),
    })
}

/// Total variation distance `½ Σ |p − q|` between two grids.
pub fn total_variation(a: &OccupancyGrid, b: &OccupancyGrid) -> f64 {
    0.5 * a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
}
