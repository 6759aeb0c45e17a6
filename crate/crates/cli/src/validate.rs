//! `hpred validate`: Monte-Carlo prediction against exhaustive enumeration,
//! plus a log-space versus linear-space check of the belief update.
//!
//! Particles are i.i.d. draws from the exact layer distribution, so the
//! expected total variation at `n` samples is close to
//! `½ Σ_c sqrt(2 p_c (1 − p_c) / (π n))`. That figure is reported as the
//! sampling noise and is the slack allowed when checking that the error
//! does not grow with `n`.

use std::fmt::Write as _;

use hpred_core::agent_models::{boltzmann_policy, ControlSet, GoalSet, HumanState, QFunction, RationalitySet};
use hpred_core::belief::{init_belief, update_with_action, HypothesisSpace, JointBelief};
use hpred_core::exec::Execution;
use hpred_core::occupancy::{GridSpec, OccupancyGrid};
use hpred_core::predictor::{exact_predict, predict, total_variation, PredictionConfig, DEFAULT_ENUMERATION_CAP};
use hpred_core::rng::{stream, Domain};
use hpred_core::sim::Scenario;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{CliError, DEFAULT_SCENARIO};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationConfig {
    pub grid_cells: usize,
    pub resolution_m: f64,
    pub n_speeds: usize,
    pub n_headings: usize,
    pub v_max_mps: f64,
    pub include_stop: bool,
    pub betas: Vec<f64>,
    pub goals_m: Vec<[f64; 2]>,
    pub start_m: [f64; 2],
    pub lookahead_s: f64,
    pub speed_weight: f64,
    pub steps: usize,
    pub dt_s: f64,
    pub samples: usize,
    pub convergence_samples: Vec<usize>,
    pub tv_bound: f64,
    pub mass_tolerance: f64,
    pub seed: u64,
    /// Random single-step updates for the belief check; 0 skips it.
    pub belief_updates: usize,
    pub belief_rel_tolerance: f64,
    pub normalization_tolerance: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            grid_cells: 10,
            resolution_m: 0.1,
            n_speeds: 1,
            n_headings: 8,
            v_max_mps: 0.1,
            include_stop: false,
            betas: vec![0.5, 5.0],
            goals_m: vec![[0.85, 0.55], [0.15, 0.25]],
            start_m: [0.52, 0.47],
            lookahead_s: 1.0,
            speed_weight: 1.0,
            steps: 3,
            dt_s: 1.0,
            samples: 65536,
            convergence_samples: vec![1024, 8192, 65536],
            tv_bound: 0.05,
            mass_tolerance: 1e-9,
            seed: 0,
            belief_updates: 100,
            belief_rel_tolerance: 1e-6,
            normalization_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: usize,
    pub tv: f64,
    pub noise: f64,
    pub mc_mass: f64,
    pub exact_mass: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub samples: usize,
    /// Worst layer.
    pub max_tv: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefCheck {
    pub updates: usize,
    pub max_rel_error: f64,
    pub max_normalization_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub tv_bound: f64,
    pub layers: Vec<LayerCheck>,
    pub convergence: Vec<ConvergencePoint>,
    pub convergence_pass: bool,
    pub belief: Option<BeliefCheck>,
    pub failures: Vec<String>,
    pub pass: bool,
}

/// The small prediction problem compared against enumeration.
pub struct OracleInstance {
    pub controls: ControlSet,
    pub q: QFunction,
    pub hypotheses: HypothesisSpace,
    pub spec: GridSpec,
    pub start: HumanState,
}

impl OracleInstance {
    pub fn new(cfg: &ValidationConfig) -> Result<Self, CliError> {
        let goals = GoalSet::new(cfg.goals_m.clone())?;
        Ok(Self {
            controls: ControlSet::grid(cfg.n_speeds, cfg.n_headings, cfg.v_max_mps, cfg.include_stop)?,
            q: QFunction::lookahead(goals.clone(), cfg.lookahead_s).with_control_weights([cfg.speed_weight, 0.0]),
            hypotheses: HypothesisSpace::new(RationalitySet::new(cfg.betas.clone())?, goals),
            spec: GridSpec::new(cfg.grid_cells, cfg.grid_cells, cfg.resolution_m, [0.0, 0.0])?,
            start: HumanState::new(cfg.start_m[0], cfg.start_m[1]),
        })
    }
}

/// Expected total variation of an `n`-sample histogram of `p`.
pub fn sampling_noise(p: &OccupancyGrid, n: usize) -> f64 {
    let n = n as f64;
    0.5 * p
        .values()
        .iter()
        .map(|&q| (2.0 * q * (1.0 - q).max(0.0) / (std::f64::consts::PI * n)).sqrt())
        .sum::<f64>()
}

/// Per-layer total variation between a Monte-Carlo run and the exact stack.
pub fn compare_layers(
    inst: &OracleInstance,
    belief: &JointBelief,
    cfg: &ValidationConfig,
    samples: usize,
    exact: &[OccupancyGrid],
    exec: &Execution,
) -> Result<Vec<LayerCheck>, CliError> {
    let pc = PredictionConfig {
        samples,
        steps: cfg.steps,
        dt_s: cfg.dt_s,
        smoothing_sigma_m: 0.0,
        seed: cfg.seed,
    };
    let mc = predict(inst.start, belief, &pc, &inst.controls, &inst.q, &inst.hypotheses, &inst.spec, 0.0, exec)?;
    Ok(mc
        .layers
        .iter()
        .zip(exact)
        .enumerate()
        .map(|(k, (m, e))| {
            let tv = total_variation(m, e);
            LayerCheck {
                layer: k,
                tv,
                noise: sampling_noise(e, samples),
                mc_mass: m.mass(),
                exact_mass: e.mass(),
                pass: tv < cfg.tv_bound
                    && (m.mass() - 1.0).abs() <= cfg.mass_tolerance
                    && (e.mass() - 1.0).abs() <= cfg.mass_tolerance,
            }
        })
        .collect())
}

/// Random single updates on the default scenario's human model, each from a
/// random prior at a random position with a random action, computed in log
/// space and by direct linear-space Bayes' rule.
pub fn check_belief(updates: usize, seed: u64, rel_tol: f64, norm_tol: f64) -> Result<BeliefCheck, CliError> {
    let s = Scenario::from_toml(DEFAULT_SCENARIO)?;
    let c = s.compile()?;
    let h = &c.hypotheses;
    let mut max_rel = 0.0f64;
    let mut max_norm = 0.0f64;
    for k in 0..updates {
        let mut rng = stream(seed, Domain::Scenario, k as u64, 0);
        let prior: Vec<f64> = (0..h.len()).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = prior.iter().sum();
        let prior: Vec<f64> = prior.iter().map(|p| p / total).collect();
        let z = HumanState::new(
            rng.random_range(0.0..s.world.width_m),
            rng.random_range(0.0..s.world.height_m),
        );
        let action = rng.random_range(0..c.controls.len());
        let b = JointBelief::from_probabilities(&prior).ok_or_else(|| CliError::Failed("invalid prior".into()))?;
        let post = update_with_action(&b, z, action, &c.controls, &c.q, h)?;
        max_norm = max_norm.max(post.log_normalizer().abs());

        let mut lin: Vec<f64> = (0..h.len())
            .map(|i| -> Result<f64, CliError> {
                let pi = boltzmann_policy(z, h.beta(i), h.goal_index(i), &c.controls, &c.q)?;
                Ok(pi[action] * prior[i])
            })
            .collect::<Result<_, _>>()?;
        let sum: f64 = lin.iter().sum();
        lin.iter_mut().for_each(|p| *p /= sum);
        for (a, b) in post.probabilities().iter().zip(&lin) {
            if *b > 0.0 {
                max_rel = max_rel.max((a - b).abs() / b);
            } else if *a != 0.0 {
                max_rel = f64::INFINITY;
            }
        }
    }
    Ok(BeliefCheck {
        updates,
        max_rel_error: max_rel,
        max_normalization_error: max_norm,
        pass: max_rel < rel_tol && max_norm <= norm_tol,
    })
}

pub fn cmd_validate(cfg: &ValidationConfig, exec: &Execution) -> Result<ValidationReport, CliError> {
    if cfg.samples == 0 || cfg.steps == 0 || !(cfg.dt_s > 0.0) {
        return Err(CliError::Usage("validate config: samples, steps and dt_s must be positive".into()));
    }
    let inst = OracleInstance::new(cfg)?;
    let belief = init_belief(&inst.hypotheses);
    let exact = exact_predict(
        inst.start,
        &belief,
        cfg.steps,
        cfg.dt_s,
        &inst.controls,
        &inst.q,
        &inst.hypotheses,
        &inst.spec,
        0.0,
        DEFAULT_ENUMERATION_CAP,
    )?;
    let mut failures = Vec::new();

    let layers = compare_layers(&inst, &belief, cfg, cfg.samples, &exact.layers, exec)?;
    for l in layers.iter().filter(|l| !l.pass) {
        failures.push(format!(
            "layer {}: tv {:.5} (bound {}), mass {:.12} / exact {:.12}",
            l.layer, l.tv, cfg.tv_bound, l.mc_mass, l.exact_mass
        ));
    }

    let mut convergence = Vec::new();
    for &n in &cfg.convergence_samples {
        let checks = compare_layers(&inst, &belief, cfg, n, &exact.layers, exec)?;
        convergence.push(ConvergencePoint {
            samples: n,
            max_tv: checks.iter().map(|c| c.tv).fold(0.0, f64::max),
            noise: checks.iter().map(|c| c.noise).fold(0.0, f64::max),
        });
    }
    let mut convergence_pass = true;
    for w in convergence.windows(2) {
        if w[1].samples > w[0].samples && w[1].max_tv > w[0].max_tv + w[1].noise {
            convergence_pass = false;
            failures.push(format!(
                "tv grew from {:.5} at n = {} to {:.5} at n = {} (noise {:.5})",
                w[0].max_tv, w[0].samples, w[1].max_tv, w[1].samples, w[1].noise
            ));
        }
    }

    let belief_check = if cfg.belief_updates > 0 {
        let b = check_belief(cfg.belief_updates, cfg.seed, cfg.belief_rel_tolerance, cfg.normalization_tolerance)?;
        if !b.pass {
            failures.push(format!(
                "belief: max relative error {:e} (tolerance {:e}), normalization {:e}",
                b.max_rel_error, cfg.belief_rel_tolerance, b.max_normalization_error
            ));
        }
        Some(b)
    } else {
        None
    };

    Ok(ValidationReport {
        samples: cfg.samples,
        tv_bound: cfg.tv_bound,
        pass: failures.is_empty(),
        layers,
        convergence,
        convergence_pass,
        belief: belief_check,
        failures,
    })
}

pub fn format_report(r: &ValidationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "prediction vs enumeration, n = {}, bound {}", r.samples, r.tv_bound);
    for l in &r.layers {
        let _ = writeln!(
            s,
            "  layer {}: tv {:.5} (noise {:.5}) mass {:.12} {}",
            l.layer,
            l.tv,
            l.noise,
            l.mc_mass,
            if l.pass { "ok" } else { "FAIL" }
        );
    }
    let _ = writeln!(s, "convergence:");
    for c in &r.convergence {
        let _ = writeln!(s, "  n = {:>7}: max tv {:.5} (noise {:.5})", c.samples, c.max_tv, c.noise);
    }
    if let Some(b) = &r.belief {
        let _ = writeln!(
            s,
            "belief: {} updates, max relative error {:.3e}, max |logsumexp| {:.3e} {}",
            b.updates,
            b.max_rel_error,
            b.max_normalization_error,
            if b.pass { "ok" } else { "FAIL" }
        );
    }
    for f in &r.failures {
        let _ = writeln!(s, "FAIL: {f}");
    }
    let _ = writeln!(s, "{}", if r.pass { "PASS" } else { "FAIL" });
    s
}
