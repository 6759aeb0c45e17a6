//! `hpred run`: one closed-loop episode with all artifacts on disk.
//!
//! Output directory layout:
//!
//! ```text
//! runlog.jsonl   run log
//! stacks.hplg    sampled prediction stacks (layered-grid format)
//! metrics.json   deterministic metrics
//! timing.json    wall-clock statistics, kept apart so metrics stay reproducible
//! replay/        CSV export for plotting (see `replay`)
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hpred_core::exec::Execution;
use hpred_core::sim::{run_episode, EpisodeSinks, RunMetrics, Scenario, TimingReport};

use crate::replay::{cmd_replay_export, ReplaySummary};
use crate::{create_dir, write_file, CliError};

pub const RUN_LOG: &str = "runlog.jsonl";
pub const STACKS: &str = "stacks.hplg";
pub const METRICS: &str = "metrics.json";
pub const TIMING: &str = "timing.json";
pub const REPLAY_DIR: &str = "replay";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub seed: u64,
    pub metrics: RunMetrics,
    pub timing: TimingReport,
    pub out_dir: PathBuf,
    pub replay: ReplaySummary,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(
        File::create(path).map_err(CliError::io(format!("creating {}", path.display())))?,
    ))
}

/// Runs `scenario` with `seed` (the scenario's own seed when `None`).
pub fn cmd_run(
    scenario: &Scenario,
    seed: Option<u64>,
    out_dir: &Path,
    exec: &Execution,
) -> Result<RunSummary, CliError> {
    let out_dir = create_dir(out_dir)?;
    let seed = seed.unwrap_or(scenario.seed);
    let log_path = out_dir.join(RUN_LOG);
    let stacks_path = out_dir.join(STACKS);
    let mut log = create(&log_path)?;
    let mut stacks = create(&stacks_path)?;
    let out = run_episode(
        scenario,
        seed,
        exec,
        EpisodeSinks {
            log: Some(&mut log),
            stacks: Some(&mut stacks),
        },
    )?;
    log.flush().map_err(CliError::io(format!("writing {}", log_path.display())))?;
    stacks
        .flush()
        .map_err(CliError::io(format!("writing {}", stacks_path.display())))?;
    drop((log, stacks));

    let mut metrics = serde_json::to_vec_pretty(&out.metrics).expect("metrics serialize");
    metrics.push(b'\n');
    write_file(&out_dir.join(METRICS), &metrics)?;
    let mut timing = serde_json::to_vec_pretty(&out.timing).expect("timing serializes");
    timing.push(b'\n');
    write_file(&out_dir.join(TIMING), &timing)?;

    let replay = cmd_replay_export(&log_path, Some(&stacks_path), &out_dir.join(REPLAY_DIR))?;
    Ok(RunSummary {
        seed,
        metrics: out.metrics,
        timing: out.timing,
        out_dir,
        replay,
    })
}

/// One-paragraph human-readable summary.
pub fn format_summary(s: &RunSummary) -> String {
    let m = &s.metrics;
    let min = m
        .min_distance_m
        .map_or_else(|| "n/a".to_string(), |d| format!("{d:.3} m"));
    format!(
        "scenario {} seed {}: {:.2} s simulated, goals {}/{}, collisions {}, min distance {}, mean speed {:.2} m/s\n\
         prediction {:.1} ms mean ({} calls), planning {:.1} ms mean ({} calls)\n\
         artifacts in {}\n",
        m.scenario,
        s.seed,
        m.duration_s,
        m.robot_goals_reached,
        m.robot_goals_total,
        m.collisions,
        min,
        m.robot_mean_speed_mps,
        s.timing.prediction.mean_s * 1e3,
        s.timing.prediction.count,
        s.timing.planning.mean_s * 1e3,
        s.timing.planning.count,
        s.out_dir.display(),
    )
}
