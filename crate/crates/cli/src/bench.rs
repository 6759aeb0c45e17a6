//! `hpred bench`: prediction wall clock versus horizon, serial and parallel.
//!
//! Every configuration is run `warmup` times untimed, then `runs` times
//! timed. The report holds per-row means and standard deviations, the
//! serial/parallel speedup per horizon, a least-squares fit of wall clock
//! against `T`, and a multi-human amortization row.

use std::fmt::Write as _;
use std::time::Instant;

use hpred_core::agent_models::{ControlSet, GoalSet, HumanState, QFunction, RationalitySet};
use hpred_core::belief::{init_belief, HypothesisSpace, JointBelief};
use hpred_core::exec::{available_threads, Execution};
use hpred_core::occupancy::GridSpec;
use hpred_core::predictor::{predict, predict_multi, HumanInput, PredictionConfig, PredictionStack, UnionMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub samples: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_count: usize,
    pub goals: usize,
    pub n_speeds: usize,
    pub n_headings: usize,
    pub include_stop: bool,
    pub v_max_mps: f64,
    pub lookahead_s: f64,
    pub speed_weight: f64,
    pub grid_cells: usize,
    pub resolution_m: f64,
    pub dt_s: f64,
    pub smoothing_sigma_m: f64,
    pub steps: Vec<usize>,
    pub runs: usize,
    pub warmup: usize,
    pub seed: u64,
    /// Humans in the multi-human row; 0 skips it.
    pub multi_humans: usize,
    pub multi_steps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            samples: 8192,
            beta_min: 0.1,
            beta_max: 10.0,
            beta_count: 5,
            goals: 10,
            n_speeds: 4,
            n_headings: 24,
            include_stop: false,
            v_max_mps: 1.0,
            lookahead_s: 0.5,
            speed_weight: 0.1,
            grid_cells: 50,
            resolution_m: 0.1,
            dt_s: 0.5,
            smoothing_sigma_m: 0.05,
            steps: vec![2, 4, 6, 8, 10],
            runs: 5,
            warmup: 1,
            seed: 0,
            multi_humans: 5,
            multi_steps: 6,
        }
    }
}

/// Which execution modes to time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchModes {
    pub serial: bool,
    pub parallel: bool,
}

impl Default for BenchModes {
    fn default() -> Self {
        Self {
            serial: true,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub steps: usize,
    pub mode: String,
    pub workers: usize,
    pub runs: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub min_s: f64,
    pub max_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub steps: usize,
    pub serial_mean_s: f64,
    pub parallel_mean_s: f64,
    pub speedup: f64,
}

/// Least-squares fit `mean_s = intercept_s + slope_s_per_step · T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope_s_per_step: f64,
    pub intercept_s: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHuman {
    pub humans: usize,
    pub steps: usize,
    pub mode: String,
    pub workers: usize,
    pub single_mean_s: f64,
    pub multi_mean_s: f64,
    /// `multi_mean_s / single_mean_s`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchConfig,
    pub hardware_threads: usize,
    pub actions: usize,
    pub rows: Vec<BenchRow>,
    pub speedups: Vec<Speedup>,
    pub serial_fit: Option<LinearFit>,
    pub parallel_fit: Option<LinearFit>,
    pub multi_human: Option<MultiHuman>,
    /// Serial and parallel runs produced identical stacks for every `T`.
    pub outputs_match: Option<bool>,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Usage(format!("bench config: {m}")));
        if self.runs == 0 {
            return bad("runs must be >= 1");
        }
        if self.steps.is_empty() || self.steps.contains(&0) {
            return bad("steps must be a non-empty list of positive horizons");
        }
        if self.grid_cells == 0 || !(self.resolution_m > 0.0) {
            return bad("grid_cells and resolution_m must be positive");
        }
        if self.goals == 0 || self.beta_count == 0 {
            return bad("goals and beta_count must be >= 1");
        }
        Ok(())
    }
}

/// The synthetic prediction problem timed by the benchmark.
pub struct BenchInstance {
    pub controls: ControlSet,
    pub q: QFunction,
    pub hypotheses: HypothesisSpace,
    pub spec: GridSpec,
    pub belief: JointBelief,
    pub humans: Vec<HumanState>,
}

impl BenchInstance {
    /// Goals sit on a circle around the grid center; humans start on a
    /// diagonal so their predictions overlap only partly.
    pub fn new(cfg: &BenchConfig) -> Result<Self, CliError> {
        let side = cfg.grid_cells as f64 * cfg.resolution_m;
        let c = side / 2.0;
        let r = 0.4 * side;
        let goals: Vec<[f64; 2]> = (0..cfg.goals)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / cfg.goals as f64;
                [c + r * a.cos(), c + r * a.sin()]
            })
            .collect();
        let goals = GoalSet::new(goals)?;
        let controls = ControlSet::grid(cfg.n_speeds, cfg.n_headings, cfg.v_max_mps, cfg.include_stop)?;
        let betas = RationalitySet::log_spaced(cfg.beta_min, cfg.beta_max, cfg.beta_count)?;
        let hypotheses = HypothesisSpace::new(betas, goals.clone());
        let q = QFunction::lookahead(goals, cfg.lookahead_s).with_control_weights([cfg.speed_weight, 0.0]);
        let spec = GridSpec::new(cfg.grid_cells, cfg.grid_cells, cfg.resolution_m, [0.0, 0.0])?;
        let belief = init_belief(&hypotheses);
        let humans = (0..cfg.multi_humans.max(1))
            .map(|i| {
                let f = (i as f64 + 1.0) / (cfg.multi_humans.max(1) as f64 + 1.0);
                HumanState::new(side * (0.25 + 0.5 * f), side * (0.3 + 0.4 * f))
            })
            .collect();
        Ok(Self {
            controls,
            q,
            hypotheses,
            spec,
            belief,
            humans,
        })
    }

    pub fn prediction_config(&self, cfg: &BenchConfig, steps: usize) -> PredictionConfig {
        PredictionConfig {
            samples: cfg.samples,
            steps,
            dt_s: cfg.dt_s,
            smoothing_sigma_m: cfg.smoothing_sigma_m,
            seed: cfg.seed,
        }
    }

    /// One single-human prediction.
    pub fn predict_one(&self, cfg: &PredictionConfig, exec: &Execution) -> Result<PredictionStack, CliError> {
        Ok(predict(
            self.humans[0],
            &self.belief,
            cfg,
            &self.controls,
            &self.q,
            &self.hypotheses,
            &self.spec,
            0.0,
            exec,
        )?)
    }

    /// Sequential prediction of the first `k` humans, merged by maximum.
    pub fn predict_many(&self, k: usize, cfg: &PredictionConfig, exec: &Execution) -> Result<PredictionStack, CliError> {
        let inputs: Vec<HumanInput<'_>> = self.humans[..k]
            .iter()
            .map(|z| HumanInput {
                state: *z,
                belief: &self.belief,
                q: &self.q,
            })
            .collect();
        Ok(predict_multi(
            &inputs,
            cfg,
            &self.controls,
            &self.hypotheses,
            &self.spec,
            0.0,
            UnionMode::Max,
            exec,
        )?)
    }
}

/// Wall-clock samples of `f` after `warmup` untimed calls.
pub fn time_runs<T>(
    warmup: usize,
    runs: usize,
    mut f: impl FnMut() -> Result<T, CliError>,
) -> Result<(Vec<f64>, T), CliError> {
    let mut last = None;
    for _ in 0..warmup {
        last = Some(f()?);
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        let out = f()?;
        samples.push(t.elapsed().as_secs_f64());
        last = Some(out);
    }
    Ok((samples, last.expect("at least one run")))
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit {
        slope_s_per_step: slope,
        intercept_s: intercept,
        r_squared,
    })
}

fn row(steps: usize, mode: &str, workers: usize, samples: &[f64]) -> BenchRow {
    let (mean_s, std_s) = mean_std(samples);
    BenchRow {
        steps,
        mode: mode.to_string(),
        workers,
        runs: samples.len(),
        mean_s,
        std_s,
        min_s: samples.iter().copied().fold(f64::INFINITY, f64::min),
        max_s: samples.iter().copied().fold(0.0, f64::max),
    }
}

/// Runs the benchmark. `workers` sizes the parallel pool (all hardware
/// threads when `None`).
pub fn cmd_bench(cfg: &BenchConfig, modes: BenchModes, workers: Option<usize>) -> Result<BenchmarkReport, CliError> {
    cfg.validate()?;
    if !modes.serial && !modes.parallel {
        return Err(CliError::Usage("bench: no execution mode selected".into()));
    }
    let inst = BenchInstance::new(cfg)?;
    let serial = Execution::Serial;
    let parallel = Execution::parallel(workers);

    let mut rows = Vec::new();
    let mut speedups = Vec::new();
    let mut outputs_match = (modes.serial && modes.parallel).then_some(true);
    for &t in &cfg.steps {
        let pc = inst.prediction_config(cfg, t);
        let mut s_out = None;
        let mut s_mean = None;
        if modes.serial {
            let (samples, out) = time_runs(cfg.warmup, cfg.runs, || inst.predict_one(&pc, &serial))?;
            let r = row(t, "serial", 1, &samples);
            s_mean = Some(r.mean_s);
            rows.push(r);
            s_out = Some(out);
        }
        if modes.parallel {
            let (samples, out) = time_runs(cfg.warmup, cfg.runs, || inst.predict_one(&pc, &parallel))?;
            let r = row(t, "parallel", parallel.workers(), &samples);
            if let Some(sm) = s_mean {
                speedups.push(Speedup {
                    steps: t,
                    serial_mean_s: sm,
                    parallel_mean_s: r.mean_s,
                    speedup: sm / r.mean_s,
                });
            }
            rows.push(r);
            if let (Some(m), Some(s)) = (outputs_match.as_mut(), s_out.as_ref()) {
                *m &= *s == out;
            }
        }
    }

    let fit = |mode: &str| {
        let (x, y): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| (r.steps as f64, r.mean_s))
            .unzip();
        linear_fit(&x, &y)
    };

    let multi_human = if cfg.multi_humans > 0 {
        let (exec, mode) = if modes.parallel {
            (&parallel, "parallel")
        } else {
            (&serial, "serial")
        };
        let pc = inst.prediction_config(cfg, cfg.multi_steps.max(1));
        let (single, _) = time_runs(cfg.warmup, cfg.runs, || inst.predict_one(&pc, exec))?;
        let (multi, _) = time_runs(cfg.warmup, cfg.runs, || inst.predict_many(cfg.multi_humans, &pc, exec))?;
        let (single_mean_s, _) = mean_std(&single);
        let (multi_mean_s, _) = mean_std(&multi);
        Some(MultiHuman {
            humans: cfg.multi_humans,
            steps: pc.steps,
            mode: mode.to_string(),
            workers: exec.workers(),
            single_mean_s,
            multi_mean_s,
            ratio: multi_mean_s / single_mean_s,
        })
    } else {
        None
    };

    Ok(BenchmarkReport {
        config: cfg.clone(),
        hardware_threads: available_threads(),
        actions: inst.controls.len(),
        serial_fit: fit("serial"),
        parallel_fit: fit("parallel"),
        rows,
        speedups,
        multi_human,
        outputs_match,
    })
}

/// Table layout: one row per mode, one column per horizon.
pub fn format_report(r: &BenchmarkReport) -> String {
    let c = &r.config;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "Prediction wall clock (s): n = {}, |B| = {}, |G| = {}, |U| = {}, {}x{} grid, mean ± std over {} runs ({} warm-up excluded), {} hardware thread{}",
        c.samples,
        c.beta_count,
        c.goals,
        r.actions,
        c.grid_cells,
        c.grid_cells,
        c.runs,
        c.warmup,
        r.hardware_threads,
        if r.hardware_threads == 1 { "" } else { "s" }
    );
    let _ = write!(s, "{:<24}", "mode");
    for t in &c.steps {
        let _ = write!(s, "{:>22}", format!("T = {t}"));
    }
    s.push('\n');
    for mode in ["serial", "parallel"] {
        let cells: Vec<&BenchRow> = r.rows.iter().filter(|x| x.mode == mode).collect();
        if cells.is_empty() {
            continue;
        }
        let label = format!("{mode} ({} worker{})", cells[0].workers, if cells[0].workers == 1 { "" } else { "s" });
        let _ = write!(s, "{label:<24}");
        for x in cells {
            let _ = write!(s, "{:>22}", format!("{:.4} ± {:.4}", x.mean_s, x.std_s));
        }
        s.push('\n');
    }
    if !r.speedups.is_empty() {
        let _ = write!(s, "{:<24}", "speedup");
        for x in &r.speedups {
            let _ = write!(s, "{:>22}", format!("{:.2}x", x.speedup));
        }
        s.push('\n');
    }
    for (name, f) in [("serial", r.serial_fit), ("parallel", r.parallel_fit)] {
        if let Some(f) = f {
            let _ = writeln!(
                s,
                "{name} fit: {:.5} s + {:.5} s/step · T, R² = {:.4}",
                f.intercept_s, f.slope_s_per_step, f.r_squared
            );
        }
    }
    if let Some(m) = &r.multi_human {
        let _ = writeln!(
            s,
            "multi-human ({} humans, T = {}, {} x{}): {:.4} s vs single {:.4} s, ratio {:.2}",
            m.humans, m.steps, m.mode, m.workers, m.multi_mean_s, m.single_mean_s, m.ratio
        );
    }
    if let Some(ok) = r.outputs_match {
        let _ = writeln!(s, "serial and parallel outputs identical: {ok}");
    }
    s
}
