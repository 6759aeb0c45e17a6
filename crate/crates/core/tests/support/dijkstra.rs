//! Brute-force time-expanded Dijkstra over (cell, step) and random 8x8x6
//! instances for it. Shared by the planner tests and the acceptance suite.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use hpred_core::occupancy::{collision_probability, GridSpec, OccupancyGrid};
use hpred_core::planners::AnaStarConfig;
use hpred_core::predictor::PredictionStack;
use rand::Rng;

/// Plain Dijkstra over (cell, step). Returns the cheapest cost to reach the
/// goal cell at any step.
pub fn dijkstra(
    stack: &PredictionStack,
    mask: &OccupancyGrid,
    start: (usize, usize),
    goal: (usize, usize),
    c: &AnaStarConfig,
) -> Option<f64> {
    let spec = stack.spec;
    let (w, h) = (spec.width, spec.height);
    let last = stack.steps() - 1;
    let mut layer_of = Vec::new();
    for k in 0.. {
        let l = stack.layer_at(k as f64 * c.dt_plan);
        layer_of.push(l);
        if l == last {
            break;
        }
    }
    let kmax = layer_of.len() - 1;
    let hits = |layer: usize, x: usize, y: usize| {
        let p = spec.cell_center(x, y);
        collision_probability(&stack.layers[layer], p, c.collision_radius_m) >= c.collision_threshold
    };
    // Costs are exact integer combinations a + b·√2 + n·penalty; track the
    // integer triple and compare by value.
    type Cost = (u64, u64, u64);
    let value = |k: &Cost| k.0 as f64 * c.dt_plan + k.1 as f64 * std::f64::consts::SQRT_2 * c.dt_plan + k.2 as f64 * c.collision_penalty;
    let n = w * h * (kmax + 1);
    let mut best: Vec<Option<Cost>> = vec![None; n];
    #[derive(PartialEq, PartialOrd)]
    struct Key(f64);
    impl Eq for Key {}
    impl Ord for Key {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&o.0)
        }
    }
    let mut heap = BinaryHeap::new();
    let s0 = start.1 * w + start.0;
    best[s0] = Some((0, 0, 0));
    heap.push(Reverse((Key(0.0), s0)));
    while let Some(Reverse((Key(v), s))) = heap.pop() {
        let cost = best[s].unwrap();
        if value(&cost) < v {
            continue;
        }
        let (cell, k) = (s % (w * h), s / (w * h));
        let (x, y) = (cell % w, cell / w);
        if (x, y) == goal {
            return Some(v);
        }
        let nk = (k + 1).min(kmax);
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if mask.get(nx, ny) > 0.5 {
                    continue;
                }
                let diag = dx != 0 && dy != 0;
                let pen = hits(layer_of[nk], nx, ny) as u64;
                let nc = (cost.0 + !diag as u64, cost.1 + diag as u64, cost.2 + pen);
                let t = nk * w * h + ny * w + nx;
                if best[t].is_none_or(|b| value(&nc) < value(&b)) {
                    best[t] = Some(nc);
                    heap.push(Reverse((Key(value(&nc)), t)));
                }
            }
        }
    }
    None
}

pub fn random_instance(rng: &mut impl Rng) -> (PredictionStack, OccupancyGrid, (usize, usize), (usize, usize)) {
    let spec = GridSpec::new(8, 8, 1.0, [0.0, 0.0]).unwrap();
    let mut stack = PredictionStack::empty(spec, 6, 0.0, 1.0);
    for layer in &mut stack.layers {
        for _ in 0..rng.random_range(3..12) {
            let (x, y) = (rng.random_range(0..8), rng.random_range(0..8));
            layer.set(x, y, rng.random_range(0.02..0.6));
        }
    }
    let mut mask = OccupancyGrid::zeros(spec);
    for _ in 0..rng.random_range(0..10) {
        mask.set(rng.random_range(0..8), rng.random_range(0..8), 1.0);
    }
    let free_cell = |rng: &mut dyn rand::RngCore| loop {
        let c = (rng.random_range(0..8), rng.random_range(0..8));
        if mask.get(c.0, c.1) < 0.5 {
            return c;
        }
    };
    let start = free_cell(rng);
    let goal = free_cell(rng);
    (stack, mask, start, goal)
}
