//! Closed-loop episodes: observe, update beliefs, predict, plan, act.
//!
//! Scheduling runs on simulated time. Observation, prediction and planning
//! fire every fixed number of simulation steps, so an episode's outcome is
//! independent of how fast the host machine is. Wall-clock cost of the
//! prediction and planning calls is measured on the side.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent_models::{HumanState, RobotControl, RobotState};
use crate::belief::{mask_stationary, BeliefTracker};
use crate::error::SimError;
use crate::exec::Execution;
use crate::occupancy::OccupancyGrid;
use crate::planners::{
    ana_star, mppi_step, sequence_cost, track_path, AnaStarConfig, CostMap, Path, PlanStatus, Waypoint,
};
use crate::predictor::{predict_multi, HumanInput, PredictionStack};
use crate::rng::derive_seed;
use crate::stack_io::write_stack;

use super::runlog::{EventRecord, HumanTruth, PlanRecord, Record, RunLog};
use super::scenario::{PlannerKind, Scenario};
use super::world::{World, WorldEvent};

/// Deterministic episode summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    pub steps: u64,
    pub duration_s: f64,
    /// Smallest robot–human center distance; absent without humans.
    pub min_distance_m: Option<f64>,
    /// Times a robot–human pair came closer than their footprint sum.
    pub collisions: u64,
    /// Steps spent in collision, summed over humans.
    pub collision_steps: u64,
    pub robot_distance_m: f64,
    pub robot_mean_speed_mps: f64,
    pub robot_goals_reached: usize,
    pub robot_goals_total: usize,
    pub all_goals_reached: bool,
    pub completion_time_s: Option<f64>,
    pub human_goal_arrivals: u64,
    pub human_goal_departures: u64,
    pub belief_resets: u64,
    pub observations: u64,
    /// Observed displacements that did not match any action within tolerance.
    pub snap_mismatches: u64,
    pub predictions: u64,
    pub plans: u64,
}

/// Wall-clock summary of repeated calls, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WallStats {
    pub count: usize,
    pub mean_s: f64,
    pub p50_s: f64,
    pub p90_s: f64,
    pub p99_s: f64,
    pub max_s: f64,
}

impl WallStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let pct = |p: f64| s[((p * (s.len() - 1) as f64).round() as usize).min(s.len() - 1)];
        Self {
            count: s.len(),
            mean_s: s.iter().sum::<f64>() / s.len() as f64,
            p50_s: pct(0.5),
            p90_s: pct(0.9),
            p99_s: pct(0.99),
            max_s: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingReport {
    pub prediction: WallStats,
    pub planning: WallStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutput {
    pub metrics: RunMetrics,
    pub timing: TimingReport,
}

/// Optional outputs of an episode.
#[derive(Default)]
pub struct EpisodeSinks<'a> {
    pub log: Option<&'a mut dyn Write>,
    pub stacks: Option<&'a mut dyn Write>,
}

struct Observer {
    tracker: BeliefTracker,
    last: Option<HumanState>,
    stationary: bool,
    observations: u64,
}

enum Controller {
    Mppi {
        nominal: Vec<RobotControl>,
        t0: f64,
    },
    AnaStar {
        path: Option<Path>,
    },
}

/// Fixed maneuvers tried when the sampled solution collides: brake straight
/// or while turning, turn briefly then brake, and accelerate while turning.
fn emergency_candidates(limits: &crate::agent_models::RobotLimits, horizon: usize) -> Vec<Vec<RobotControl>> {
    let (a, w) = (limits.a_max, limits.omega_max);
    let swerve = horizon / 4;
    let mut out: Vec<Vec<RobotControl>> = [(-a, 0.0), (-a, w), (-a, -w), (a, w), (a, -w)]
        .into_iter()
        .map(|(a, w)| vec![RobotControl::new(a, w); horizon])
        .collect();
    for (ua, uw) in [(0.0, w), (0.0, -w), (a, w), (a, -w)] {
        let mut seq = vec![RobotControl::new(ua, uw); swerve];
        seq.resize(horizon, RobotControl::new(-a, 0.0));
        out.push(seq);
    }
    out
}

/// Ranking key for a predicted trajectory: the first colliding step (later
/// is better) and the number of colliding steps.
fn collision_profile(states: &[RobotState], t0: f64, dt: f64, map: &CostMap) -> (usize, usize) {
    let mut first = usize::MAX;
    let mut count = 0;
    for (k, s) in states.iter().enumerate().skip(1) {
        if map.collides(s.position(), t0 + k as f64 * dt) {
            first = first.min(k);
            count += 1;
        }
    }
    (first, count)
}

fn log_record(log: &mut Option<RunLog<&mut dyn Write>>, r: Record) -> Result<(), SimError> {
    if let Some(l) = log.as_mut() {
        l.write(&r)?;
    }
    Ok(())
}

/// Runs one episode to the time limit or until the robot has reached every
/// goal.
pub fn run_episode(
    scenario: &Scenario,
    seed: u64,
    exec: &Execution,
    sinks: EpisodeSinks<'_>,
) -> Result<EpisodeOutput, SimError> {
    let c = scenario.compile()?;
    let mut world = World::new(scenario, seed)?;
    let mut log = sinks.log.map(RunLog::new);
    let mut stacks_out = sinks.stacks;
    let model = &scenario.human_model;
    let robot_spec = &scenario.robot;
    let planner = &scenario.planner;
    let dt = c.dt;
    let obs_dt = c.observe_every as f64 * dt;
    let max_human_radius = scenario.humans.iter().map(|h| h.radius_m).fold(0.0, f64::max);
    let plan_radius = robot_spec.radius_m + max_human_radius + planner.safety_margin_m;
    let footprints: Vec<f64> = scenario
        .humans
        .iter()
        .map(|h| h.radius_m + robot_spec.radius_m)
        .collect();

    let mut observers: Vec<Observer> = scenario
        .humans
        .iter()
        .map(|_| Observer {
            tracker: BeliefTracker::new(&c.hypotheses),
            last: None,
            stationary: false,
            observations: 0,
        })
        .collect();
    let mut controller = match planner.kind {
        PlannerKind::Mppi => Controller::Mppi {
            nominal: vec![RobotControl::ZERO; planner.mppi.horizon_steps],
            t0: 0.0,
        },
        PlannerKind::AnaStar => Controller::AnaStar { path: None },
    };
    let mppi_cfg = planner.mppi.config(derive_seed(seed, 0x4d50));
    let ana_cfg = AnaStarConfig {
        dt_plan: planner.ana_star.dt_plan_s,
        time_limit_s: planner.ana_star.time_limit_s,
        collision_radius_m: plan_radius,
        collision_threshold: planner.ana_star.collision_threshold,
        collision_penalty: planner.ana_star.collision_penalty,
        allow_wait: planner.ana_star.allow_wait,
        max_expansions: planner.ana_star.max_expansions,
    };

    let mut m = RunMetrics {
        scenario: scenario.name.clone(),
        seed,
        steps: 0,
        duration_s: 0.0,
        min_distance_m: None,
        collisions: 0,
        collision_steps: 0,
        robot_distance_m: 0.0,
        robot_mean_speed_mps: 0.0,
        robot_goals_reached: 0,
        robot_goals_total: robot_spec.goals_m.len(),
        all_goals_reached: robot_spec.goals_m.is_empty(),
        completion_time_s: None,
        human_goal_arrivals: 0,
        human_goal_departures: 0,
        belief_resets: 0,
        observations: 0,
        snap_mismatches: 0,
        predictions: 0,
        plans: 0,
    };
    let mut pred_wall = Vec::new();
    let mut plan_wall = Vec::new();
    let mut stack: Option<PredictionStack> = None;
    let mut stack_records = 0u64;
    let mut in_collision = vec![false; scenario.humans.len()];
    let mut applied: Option<RobotControl> = None;
    let mut last_plan_t = 0.0;

    log_record(
        &mut log,
        Record::Header {
            scenario: scenario.name.clone(),
            seed,
            dt_s: dt,
            betas: c.hypotheses.rationalities.as_slice().to_vec(),
            goals: c.hypotheses.goals.as_slice().to_vec(),
        },
    )?;

    let truth = |w: &World| -> Vec<HumanTruth> {
        w.humans
            .iter()
            .map(|h| HumanTruth {
                x: h.state.x,
                y: h.state.y,
                goal: h.goal(),
                dwelling: h.is_dwelling(),
            })
            .collect()
    };
    let log_state = |log: &mut Option<RunLog<&mut dyn Write>>, w: &World| {
        log_record(
            log,
            Record::State {
                t: w.time,
                step: w.step,
                robot: w.robot,
                humans: truth(w),
            },
        )
    };

    // Contact bookkeeping for the current world state.
    let mut account = |w: &World, m: &mut RunMetrics, log: &mut Option<RunLog<&mut dyn Write>>| -> Result<(), SimError> {
        for (i, d) in w.robot_distances().into_iter().enumerate() {
            m.min_distance_m = Some(m.min_distance_m.map_or(d, |x| x.min(d)));
            let hit = d < footprints[i];
            if hit {
                m.collision_steps += 1;
                if !in_collision[i] {
                    m.collisions += 1;
                    log_record(
                        log,
                        Record::Event {
                            t: w.time,
                            event: EventRecord::Collision { human: i, distance: d },
                        },
                    )?;
                }
            }
            in_collision[i] = hit;
        }
        Ok(())
    };
    let check_goal = |w: &World, m: &mut RunMetrics, log: &mut Option<RunLog<&mut dyn Write>>| -> Result<bool, SimError> {
        while m.robot_goals_reached < robot_spec.goals_m.len() {
            let g = robot_spec.goals_m[m.robot_goals_reached];
            let p = w.robot.position();
            if (p[0] - g[0]).hypot(p[1] - g[1]) >= robot_spec.goal_tolerance_m {
                break;
            }
            log_record(
                log,
                Record::Event {
                    t: w.time,
                    event: EventRecord::RobotGoalReached {
                        index: m.robot_goals_reached,
                    },
                },
            )?;
            m.robot_goals_reached += 1;
        }
        let done = m.robot_goals_reached == robot_spec.goals_m.len();
        if done && !m.all_goals_reached {
            m.all_goals_reached = true;
            m.completion_time_s = Some(w.time);
        }
        Ok(done && !robot_spec.goals_m.is_empty())
    };

    log_state(&mut log, &world)?;
    account(&world, &mut m, &mut log)?;
    let mut done = check_goal(&world, &mut m, &mut log)?;

    while !done && world.step < c.steps {
        let step = world.step;
        let t = world.time;

        if step % c.observe_every == 0 {
            let obs = world.observe(model.observation_noise_m, step / c.observe_every);
            for (i, (o, z)) in observers.iter_mut().zip(obs).enumerate() {
                let upd = o
                    .tracker
                    .observe(z, obs_dt, &c.controls, &c.q, &c.hypotheses)?;
                o.last = Some(z);
                o.observations += 1;
                m.observations += 1;
                if let Some(u) = upd {
                    o.stationary = u.speed <= model.stationary_speed_mps;
                    m.snap_mismatches += u.clamped as u64;
                }
                if scenario.log.log_observations {
                    log_record(
                        &mut log,
                        Record::Observation {
                            t,
                            human: i,
                            x: z.x,
                            y: z.y,
                            action: upd.map(|u| u.action_idx),
                            speed: upd.map(|u| u.speed),
                            stationary: o.stationary,
                        },
                    )?;
                }
                if o.observations % scenario.log.belief_every_observations as u64 == 0 {
                    log_record(
                        &mut log,
                        Record::Belief {
                            t,
                            human: i,
                            probabilities: o.tracker.belief().probabilities(),
                        },
                    )?;
                }
            }
        }

        if step % c.predict_every == 0 && !observers.is_empty() {
            let qs: Vec<_> = observers
                .iter()
                .map(|o| {
                    if o.stationary {
                        mask_stationary(&c.q, &c.controls, model.stationary_mask_speed_mps).unwrap_or_else(|_| c.q.clone())
                    } else {
                        c.q.clone()
                    }
                })
                .collect();
            let inputs: Vec<HumanInput<'_>> = observers
                .iter()
                .zip(&qs)
                .map(|(o, q)| HumanInput {
                    state: o.last.expect("observed before first prediction"),
                    belief: o.tracker.belief(),
                    q,
                })
                .collect();
            let cfg = crate::predictor::PredictionConfig {
                seed: derive_seed(seed, m.predictions),
                ..c.prediction
            };
            let clock = Instant::now();
            let s = predict_multi(&inputs, &cfg, &c.controls, &c.hypotheses, &c.spec, t, c.union, exec)?;
            pred_wall.push(clock.elapsed().as_secs_f64());
            let every = scenario.log.stack_every_predictions as u64;
            let mut record = None;
            if let Some(out) = stacks_out.as_mut() {
                if every > 0 && m.predictions % every == 0 {
                    write_stack(out, &s)?;
                    record = Some(stack_records);
                    stack_records += 1;
                }
            }
            log_record(
                &mut log,
                Record::Prediction {
                    t,
                    index: m.predictions,
                    base_time: s.base_time,
                    dt_s: s.dt,
                    layers: s.steps(),
                    max_occupancy: s.layers.iter().map(|l| l.max_value()).fold(0.0, f64::max),
                    stack_record: record,
                },
            )?;
            m.predictions += 1;
            stack = Some(s);
        }

        if step % c.plan_every == 0 {
            let current = stack
                .clone()
                .unwrap_or_else(|| PredictionStack::empty(c.spec, 1, t, c.prediction.dt_s));
            let mut present = OccupancyGrid::zeros(c.spec);
            for o in &observers {
                if let Some(z) = o.last {
                    let hit = c.spec.clamped_index(z.x, z.y);
                    present.values_mut()[hit.index] = 1.0;
                }
            }
            let goal = robot_spec
                .goals_m
                .get(m.robot_goals_reached)
                .copied()
                .unwrap_or_else(|| world.robot.position());
            let clock = Instant::now();
            let rec = match &mut controller {
                Controller::Mppi { nominal, t0 } => {
                    let map = CostMap::new(&current, Some(&c.static_mask), plan_radius, mppi_cfg.collision_threshold)?
                        .with_present(&present, plan_radius, mppi_cfg.collision_threshold, current.base_time + current.dt);
                    let shift = ((t - last_plan_t) / mppi_cfg.dt_plan).round() as usize;
                    for _ in 0..shift.min(nominal.len()) {
                        crate::planners::shift_nominal(nominal);
                    }
                    let z = world.robot;
                    let target = RobotState {
                        x: goal[0],
                        y: goal[1],
                        v: 0.0,
                        theta: (goal[1] - z.y).atan2(goal[0] - z.x),
                    };
                    let out = mppi_step(z, t, nominal, &target, &map, &mppi_cfg, &world.limits, m.plans, exec)?;
                    *nominal = out.controls;
                    *t0 = t;
                    let mut fallback = None;
                    let (cost, states) = sequence_cost(z, t, nominal, &target, &map, &mppi_cfg, &world.limits);
                    let (first, count) = collision_profile(&states, t, mppi_cfg.dt_plan, &map);
                    if count > 0 {
                        let mut best = (std::cmp::Reverse(first), count, cost);
                        for (i, cand) in emergency_candidates(&world.limits, nominal.len()).into_iter().enumerate() {
                            let (cost, states) = sequence_cost(z, t, &cand, &target, &map, &mppi_cfg, &world.limits);
                            let (first, count) = collision_profile(&states, t, mppi_cfg.dt_plan, &map);
                            let key = (std::cmp::Reverse(first), count, cost);
                            if key < best {
                                best = key;
                                *nominal = cand;
                                fallback = Some(i);
                            }
                        }
                    }
                    PlanRecord::Mppi {
                        control: nominal[0],
                        fallback,
                        best_cost: out.diagnostics.best_cost,
                        mean_cost: out.diagnostics.mean_cost,
                        effective_samples: out.diagnostics.effective_samples,
                        best_rollout: out.best.states.iter().map(|s| s.position()).collect(),
                    }
                }
                Controller::AnaStar { path } => {
                    let start = c.spec.clamped_index(world.robot.x, world.robot.y).index;
                    let gi = c.spec.clamped_index(goal[0], goal[1]).index;
                    let res = ana_star(
                        &current,
                        &c.static_mask,
                        c.spec.coords(start),
                        t,
                        c.spec.coords(gi),
                        &ana_cfg,
                    )?;
                    let adopted = res.found() && (res.collision_free || path.is_none());
                    if adopted {
                        let mut p = res.path.clone();
                        // Start from the robot's actual position.
                        if let Some(w0) = p.waypoints.first_mut() {
                            w0.x = world.robot.x;
                            w0.y = world.robot.y;
                        }
                        *path = Some(p);
                    } else if path.is_none() {
                        *path = Some(Path {
                            waypoints: vec![Waypoint {
                                x: world.robot.x,
                                y: world.robot.y,
                                t,
                            }],
                        });
                    }
                    PlanRecord::AnaStar {
                        status: res.status,
                        cost: res.cost.is_finite().then_some(res.cost),
                        solutions: res.solutions.clone(),
                        expansions: res.expansions,
                        collision_free: res.collision_free && res.status != PlanStatus::NoPath,
                        adopted,
                        waypoints: res.path.waypoints.iter().map(|w| [w.x, w.y, w.t]).collect(),
                    }
                }
            };
            plan_wall.push(clock.elapsed().as_secs_f64());
            last_plan_t = t;
            m.plans += 1;
            log_record(&mut log, Record::Plan { t, plan: rec })?;
        }

        let u = match &controller {
            Controller::Mppi { nominal, t0 } => {
                let k = ((t - t0) / mppi_cfg.dt_plan + 1e-9).floor() as usize;
                nominal[k.min(nominal.len() - 1)]
            }
            Controller::AnaStar { path } => match path {
                Some(p) => track_path(p, &world.robot, t, &planner.tracker, &world.limits)?,
                None => RobotControl::ZERO,
            },
        };
        if applied != Some(u) {
            log_record(&mut log, Record::Control { t, a: u.a, omega: u.omega })?;
            applied = Some(u);
        }

        let before = world.robot.position();
        let events = world.step(u)?;
        let after = world.robot.position();
        m.robot_distance_m += (after[0] - before[0]).hypot(after[1] - before[1]);
        for e in events {
            log_record(&mut log, Record::Event { t: world.time, event: EventRecord::World(e) })?;
            match e {
                WorldEvent::HumanReachedGoal { .. } => m.human_goal_arrivals += 1,
                WorldEvent::HumanLeftGoal { human, .. } => {
                    m.human_goal_departures += 1;
                    observers[human].tracker.reset();
                    m.belief_resets += 1;
                    log_record(
                        &mut log,
                        Record::Event {
                            t: world.time,
                            event: EventRecord::BeliefReset { human },
                        },
                    )?;
                }
            }
        }
        if world.step % scenario.log.state_every_steps as u64 == 0 {
            log_state(&mut log, &world)?;
        }
        account(&world, &mut m, &mut log)?;
        done = check_goal(&world, &mut m, &mut log)?;
    }

    m.steps = world.step;
    m.duration_s = world.time;
    m.robot_mean_speed_mps = if world.time > 0.0 {
        m.robot_distance_m / world.time
    } else {
        0.0
    };
    if world.step % scenario.log.state_every_steps as u64 != 0 {
        log_state(&mut log, &world)?;
    }
    log_record(&mut log, Record::Metrics { metrics: m.clone() })?;
    if let Some(l) = log.as_mut() {
        l.flush()?;
    }
    Ok(EpisodeOutput {
        metrics: m,
        timing: TimingReport {
            prediction: WallStats::from_samples(&pred_wall),
            planning: WallStats::from_samples(&plan_wall),
        },
    })
}
