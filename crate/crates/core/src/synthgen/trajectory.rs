//! Filleted waypoint loops sampled at a fixed pose rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventio::{ArenaConfig, Pose, PoseSample};

/// Pose log period (100 Hz).
pub const POSE_PERIOD_US: u64 = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    /// Loop corners in counter-clockwise order. Empty means a rectangle
    /// inset `inset_m` from the arena walls.
    pub waypoints: Vec<[f64; 2]>,
    pub inset_m: f64,
    pub speed_mps: f64,
    pub rounds: usize,
    /// Corner rounding radius.
    pub corner_radius_m: f64,
    /// Uniform per-axis perturbation applied to every waypoint.
    pub jitter_m: f64,
    pub seed: u64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            waypoints: Vec::new(),
            inset_m: 0.75,
            speed_mps: 0.3,
            rounds: 1,
            corner_radius_m: 0.4,
            jitter_m: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Piece {
    Line { a: [f64; 2], b: [f64; 2] },
    Arc { c: [f64; 2], r: f64, start: f64, sweep: f64 },
}

impl Piece {
    fn length(&self) -> f64 {
        match *self {
            Piece::Line { a, b } => (b[0] - a[0]).hypot(b[1] - a[1]),
            Piece::Arc { r, sweep, .. } => r * sweep.abs(),
        }
    }

    fn at(&self, s: f64) -> Pose {
        match *self {
            Piece::Line { a, b } => {
                let l = self.length();
                let f = if l > 0.0 { s / l } else { 0.0 };
                Pose {
                    x: a[0] + f * (b[0] - a[0]),
                    y: a[1] + f * (b[1] - a[1]),
                    yaw: (b[1] - a[1]).atan2(b[0] - a[0]),
                }
            }
            Piece::Arc { c, r, start, sweep } => {
                let th = start + sweep.signum() * s / r;
                let tangent = th + sweep.signum() * std::f64::consts::FRAC_PI_2;
                Pose {
                    x: c[0] + r * th.cos(),
                    y: c[1] + r * th.sin(),
                    yaw: tangent.sin().atan2(tangent.cos()),
                }
            }
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self, arena: &ArenaConfig) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("trajectory rounds must be at least 1".into()));
        }
        if !(self.speed_mps > 0.0) || self.corner_radius_m < 0.0 || self.jitter_m < 0.0 {
            return Err(Error::Config("trajectory speed must be positive, radius and jitter non-negative".into()));
        }
        let pts = self.corners(arena);
        if pts.len() < 3 {
            return Err(Error::Config("a loop needs at least three waypoints".into()));
        }
        for p in &pts {
            if !arena.contains(p[0], p[1]) {
                return Err(Error::OutOfArena {
                    x: p[0],
                    y: p[1],
                    width: arena.width_m,
                    height: arena.height_m,
                });
            }
        }
        let area: f64 = (0..pts.len())
            .map(|i| {
                let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
                p[0] * q[1] - q[0] * p[1]
            })
            .sum();
        if area <= 0.0 {
            return Err(Error::Config("waypoints must run counter-clockwise".into()));
        }
        Ok(())
    }

    /// Jittered loop corners.
    pub fn corners(&self, arena: &ArenaConfig) -> Vec<[f64; 2]> {
        let base = if self.waypoints.is_empty() {
            let (i, w, h) = (self.inset_m, arena.width_m, arena.height_m);
            vec![[i, i], [w - i, i], [w - i, h - i], [i, h - i]]
        } else {
            self.waypoints.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        base.into_iter()
            .map(|[x, y]| {
                if self.jitter_m > 0.0 {
                    [
                        x + rng.random_range(-self.jitter_m..=self.jitter_m),
                        y + rng.random_range(-self.jitter_m..=self.jitter_m),
                    ]
                } else {
                    [x, y]
                }
            })
            .collect()
    }

    /// One loop as lines and fillet arcs, starting halfway along the first
    /// side.
    fn pieces(&self, arena: &ArenaConfig) -> Result<Vec<Piece>> {
        let p = self.corners(arena);
        let n = p.len();
        let unit = |a: [f64; 2], b: [f64; 2]| {
            let l = (b[0] - a[0]).hypot(b[1] - a[1]);
            [(b[0] - a[0]) / l, (b[1] - a[1]) / l]
        };
        // Per corner: tangent points in and out plus the arc.
        let mut corners = Vec::with_capacity(n);
        for i in 0..n {
            let (prev, cur, next) = (p[(i + n - 1) % n], p[i], p[(i + 1) % n]);
            let (din, dout) = (unit(prev, cur), unit(cur, next));
            let cross = din[0] * dout[1] - din[1] * dout[0];
            let turn = cross.atan2(din[0] * dout[0] + din[1] * dout[1]);
            let r = self.corner_radius_m;
            if r == 0.0 || turn.abs() < 1e-9 {
                corners.push((cur, cur, None));
                continue;
            }
            let t = r * (turn.abs() / 2.0).tan();
            let tin = [cur[0] - din[0] * t, cur[1] - din[1] * t];
            let tout = [cur[0] + dout[0] * t, cur[1] + dout[1] * t];
            let s = turn.signum();
            let normal = [-din[1] * s, din[0] * s];
            let c = [tin[0] + normal[0] * r, tin[1] + normal[1] * r];
            let start = (tin[1] - c[1]).atan2(tin[0] - c[0]);
            corners.push((tin, tout, Some(Piece::Arc { c, r, start, sweep: turn })));
        }
        let mut pieces = Vec::new();
        let mut mid = [0.0; 2];
        for i in 0..n {
            let j = (i + 1) % n;
            let (a, b) = (corners[i].1, corners[j].0);
            let side = unit(p[i], p[j]);
            if (b[0] - a[0]) * side[0] + (b[1] - a[1]) * side[1] < 0.0 {
                return Err(Error::Config(format!(
                    "corner radius {} too large for side {i}",
                    self.corner_radius_m
                )));
            }
            if i == 0 {
                mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
                pieces.push(Piece::Line { a: mid, b });
            } else {
                pieces.push(Piece::Line { a, b });
            }
            if let Some(arc) = corners[j].2 {
                pieces.push(arc);
            }
        }
        pieces.push(Piece::Line { a: corners[0].1, b: mid });
        Ok(pieces)
    }
}

/// Poses at 100 Hz along `rounds` laps at constant speed. The final pose
/// sits exactly at the loop's end, which coincides with its start.
pub fn generate_trajectory(spec: &TrajectorySpec, arena: &ArenaConfig) -> Result<Vec<PoseSample>> {
    arena.validate()?;
    spec.validate(arena)?;
    let pieces = spec.pieces(arena)?;
    let lap: f64 = pieces.iter().map(Piece::length).sum();
    let total = lap * spec.rounds as f64;
    let step = spec.speed_mps * POSE_PERIOD_US as f64 * 1e-6;
    let n = (total / step).ceil() as u64;
    let mut out = Vec::with_capacity(n as usize + 1);
    for i in 0..=n {
        let s = (i as f64 * step).min(total);
        let mut rem = s.rem_euclid(lap);
        if i == n {
            rem = lap;
        }
        let mut pose = pieces[0].at(0.0);
        for p in &pieces {
            let l = p.length();
            if rem <= l {
                pose = p.at(rem);
                break;
            }
            rem -= l;
        }
        out.push(PoseSample {
            t_us: i * POSE_PERIOD_US,
            pose,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.x - b.x).hypot(a.y - b.y) <= tol
    }

    #[test]
    fn loop_closes() {
        let arena = ArenaConfig::default();
        let spec = TrajectorySpec::default();
        let poses = generate_trajectory(&spec, &arena).unwrap();
        let step = spec.speed_mps * 0.01;
        assert!(close(&poses[0].pose, &poses.last().unwrap().pose, step));
        for w in poses.windows(2) {
            assert!(close(&w[0].pose, &w[1].pose, step + 1e-9));
            assert_eq!(w[1].t_us - w[0].t_us, POSE_PERIOD_US);
        }
    }

    #[test]
    fn motion_is_counter_clockwise_and_yaw_follows_travel() {
        let arena = ArenaConfig::default();
        let poses = generate_trajectory(&TrajectorySpec { jitter_m: 0.0, ..Default::default() }, &arena).unwrap();
        // Start on the bottom side heading +x.
        assert!(poses[0].pose.yaw.abs() < 1e-12);
        let mut winding = 0.0;
        for w in poses.windows(2) {
            let (a, b) = (&w[0].pose, &w[1].pose);
            let d = (b.y - a.y).atan2(b.x - a.x);
            let diff = (d - a.yaw).sin().atan2((d - a.yaw).cos());
            assert!(diff.abs() < 0.1, "heading {} vs travel {d}", a.yaw);
            let dy = b.yaw - a.yaw;
            winding += dy.sin().atan2(dy.cos());
        }
        assert!((winding - std::f64::consts::TAU).abs() < 1e-6, "{winding}");
    }

    #[test]
    fn doubling_speed_halves_duration() {
        let arena = ArenaConfig::default();
        let slow = generate_trajectory(&TrajectorySpec::default(), &arena).unwrap();
        let fast = generate_trajectory(&TrajectorySpec { speed_mps: 0.6, ..Default::default() }, &arena).unwrap();
        let (ts, tf) = (slow.last().unwrap().t_us as f64, fast.last().unwrap().t_us as f64);
        assert!((ts / 2.0 - tf).abs() <= POSE_PERIOD_US as f64, "{ts} {tf}");
    }

    #[test]
    fn rounds_scale_duration() {
        let arena = ArenaConfig::default();
        let one = generate_trajectory(&TrajectorySpec::default(), &arena).unwrap();
        let three = generate_trajectory(&TrajectorySpec { rounds: 3, ..Default::default() }, &arena).unwrap();
        let (a, b) = (one.last().unwrap().t_us as f64, three.last().unwrap().t_us as f64);
        assert!((3.0 * a - b).abs() <= 3.0 * POSE_PERIOD_US as f64);
    }

    #[test]
    fn seed_determines_the_log() {
        let arena = ArenaConfig::default();
        let spec = TrajectorySpec { seed: 7, ..Default::default() };
        let a = generate_trajectory(&spec, &arena).unwrap();
        let b = generate_trajectory(&spec, &arena).unwrap();
        assert_eq!(a, b);
        let c = generate_trajectory(&TrajectorySpec { seed: 8, ..spec }, &arena).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn stays_inside_arena() {
        let arena = ArenaConfig::default();
        for seed in 0..5 {
            let poses = generate_trajectory(&TrajectorySpec { seed, ..Default::default() }, &arena).unwrap();
            assert!(poses.iter().all(|p| arena.contains(p.pose.x, p.pose.y)));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let arena = ArenaConfig::default();
        assert!(generate_trajectory(&TrajectorySpec { rounds: 0, ..Default::default() }, &arena).is_err());
        let cw = TrajectorySpec {
            waypoints: vec![[1.0, 1.0], [1.0, 3.0], [5.0, 3.0], [5.0, 1.0]],
            ..Default::default()
        };
        assert!(generate_trajectory(&cw, &arena).is_err());
        let outside = TrajectorySpec {
            waypoints: vec![[1.0, 1.0], [7.0, 1.0], [5.0, 3.0]],
            ..Default::default()
        };
        assert!(generate_trajectory(&outside, &arena).is_err());
    }
}
