//! Runs a scenario over a range of seeds and prints one summary line each.
//!
//! Usage: `cargo run --release --example sweep -- <scenario.toml> [end] [start]`

use hpred_core::exec::Execution;
use hpred_core::sim::{run_episode, EpisodeSinks, Scenario};

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().expect("usage: sweep <scenario.toml> [end] [start]");
    let end: u64 = args.next().map_or(5, |s| s.parse().expect("end seed"));
    let start: u64 = args.next().map_or(0, |s| s.parse().expect("start seed"));
    let text = std::fs::read_to_string(&path).expect("readable scenario");
    let s = Scenario::from_toml(&text).expect("valid scenario");
    for seed in start..end {
        let t = std::time::Instant::now();
        let o = run_episode(&s, seed, &Execution::Serial, EpisodeSinks::default()).expect("episode runs");
        let m = o.metrics;
        println!(
            "seed {seed}: collisions {} min {:.3} m goals {}/{} done {:?} wall {:.1} s",
            m.collisions,
            m.min_distance_m.unwrap_or(f64::NAN),
            m.robot_goals_reached,
            m.robot_goals_total,
            m.completion_time_s,
            t.elapsed().as_secs_f64(),
        );
    }
}
