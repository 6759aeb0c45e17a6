//! Deterministic closed-loop simulation of humans and a planning robot.

pub mod episode;
pub mod runlog;
pub mod scenario;
pub mod world;

pub use episode::{run_episode, EpisodeOutput, EpisodeSinks, RunMetrics, TimingReport, WallStats};
pub use runlog::{read_log, Record, RunLog};
pub use scenario::Scenario;
pub use world::{World, WorldEvent};
