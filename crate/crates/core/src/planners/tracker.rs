//! Time-indexed path tracking with a state-feedback law on the linearized
//! Dubins error dynamics.

use serde::{Deserialize, Serialize};

use crate::agent_models::{wrap_angle, RobotControl, RobotLimits, RobotState};
use crate::error::PlanError;

use super::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerGains {
    pub k_speed: f64,
    pub k_along: f64,
    pub k_cross: f64,
    pub k_heading: f64,
    /// Errors below this magnitude produce a zero control.
    pub deadband: f64,
}

impl Default for TrackerGains {
    fn default() -> Self {
        Self {
            k_speed: 1.5,
            k_along: 1.0,
            k_cross: 3.0,
            k_heading: 2.5,
            deadband: 1e-6,
        }
    }
}

struct Reference {
    pos: [f64; 2],
    heading: Option<f64>,
    speed: f64,
}

fn reference(path: &Path, t: f64) -> Reference {
    let w = &path.waypoints;
    if w.len() == 1 || t >= w[w.len() - 1].t {
        let last = w[w.len() - 1];
        return Reference {
            pos: [last.x, last.y],
            heading: None,
            speed: 0.0,
        };
    }
    let i = w.partition_point(|p| p.t <= t).saturating_sub(1);
    let (a, b) = (w[i], w[i + 1]);
    let s = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len = dx.hypot(dy);
    // Heading of the next segment that actually moves, if any.
    let heading = w[i..]
        .windows(2)
        .map(|p| (p[1].x - p[0].x, p[1].y - p[0].y))
        .find(|(x, y)| x.hypot(*y) > 1e-12)
        .map(|(x, y)| y.atan2(x));
    Reference {
        pos: [a.x + s * dx, a.y + s * dy],
        heading,
        speed: len / (b.t - a.t),
    }
}

/// Bounded control steering the robot toward the path reference at time `t`.
pub fn track_path(
    path: &Path,
    z: &RobotState,
    t: f64,
    gains: &TrackerGains,
    limits: &RobotLimits,
) -> Result<RobotControl, PlanError> {
    if path.is_empty() {
        return Err(PlanError::EmptyPath);
    }
    let r = reference(path, t);
    let (s, c) = z.theta.sin_cos();
    let (dx, dy) = (r.pos[0] - z.x, r.pos[1] - z.y);
    let along = c * dx + s * dy;
    let cross = -s * dx + c * dy;
    let heading_err = r.heading.map_or(0.0, |h| wrap_angle(h - z.theta));
    let speed_err = r.speed - z.v;
    if along.abs() < gains.deadband
        && cross.abs() < gains.deadband
        && heading_err.abs() < gains.deadband
        && speed_err.abs() < gains.deadband
    {
        return Ok(RobotControl::ZERO);
    }
    let a = gains.k_speed * speed_err + gains.k_along * along;
    let omega = gains.k_heading * heading_err + gains.k_cross * cross;
    Ok(limits.clamp(RobotControl::new(a, omega)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent_models::robot_step;
    use crate::planners::Waypoint;

    fn straight(speed: f64, duration: f64) -> Path {
        let n = (duration / 0.1) as usize;
        Path {
            waypoints: (0..=n)
                .map(|k| {
                    let t = k as f64 * 0.1;
                    Waypoint { x: speed * t, y: 0.0, t }
                })
                .collect(),
        }
    }

    #[test]
    fn equilibrium_gives_zero_control() {
        let p = straight(0.5, 5.0);
        let z = RobotState::new(0.5, 0.0, 0.5, 0.0);
        let u = track_path(&p, &z, 1.0, &TrackerGains::default(), &RobotLimits::default()).unwrap();
        assert!(u.a.abs() < 1e-9 && u.omega.abs() < 1e-9, "{u:?}");
    }

    #[test]
    fn reference_ahead_accelerates_straight() {
        let p = straight(1.0, 5.0);
        let z = RobotState::new(0.8, 0.0, 0.5, 0.0);
        let u = track_path(&p, &z, 1.0, &TrackerGains::default(), &RobotLimits::default()).unwrap();
        assert!(u.a > 0.0);
        assert!(u.omega.abs() < 1e-12);
    }

    #[test]
    fn closed_loop_cross_track_converges() {
        let p = straight(0.5, 10.0);
        let lim = RobotLimits::default();
        let gains = TrackerGains::default();
        let mut z = RobotState::new(0.0, 0.3, 0.5, 0.0);
        let dt = 0.02;
        let mut t = 0.0;
        while t < 3.0 - 1e-9 {
            let u = track_path(&p, &z, t, &gains, &lim).unwrap();
            assert!(lim.admits(&u));
            z = robot_step(z, u, dt, &lim);
            t += dt;
        }
        assert!(z.y.abs() < 0.05, "cross-track {}", z.y);
    }

    #[test]
    fn empty_path_is_an_error() {
        let z = RobotState::new(0.0, 0.0, 0.0, 0.0);
        assert!(track_path(&Path::default(), &z, 0.0, &TrackerGains::default(), &RobotLimits::default()).is_err());
    }
}
