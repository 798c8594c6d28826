//! Edge-beacon event renderer.
//!
//! Every beacon is a set of vertical stripe edges on a wall. Each edge is
//! projected through a pinhole camera at consecutive poses. While its
//! image column moves, every pixel row it covers fires events at a rate
//! proportional to the column speed. Illumination thins those events.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eventio::{ArenaConfig, Event, EventStream, Pose, PoseSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wall {
    /// y = 0
    South,
    /// x = width
    East,
    /// y = height
    North,
    /// x = 0
    West,
}

impl Wall {
    pub const ALL: [Wall; 4] = [Wall::South, Wall::East, Wall::North, Wall::West];

    fn length(self, arena: &ArenaConfig) -> f64 {
        match self {
            Wall::South | Wall::North => arena.width_m,
            Wall::East | Wall::West => arena.height_m,
        }
    }

    /// Floor point `offset` metres along the wall, walking counter-clockwise.
    fn point(self, arena: &ArenaConfig, offset: f64) -> [f64; 2] {
        let (w, h) = (arena.width_m, arena.height_m);
        match self {
            Wall::South => [offset, 0.0],
            Wall::East => [w, offset],
            Wall::North => [w - offset, h],
            Wall::West => [0.0, h - offset],
        }
    }
}

/// A vertical stripe pattern mounted on a wall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Beacon {
    pub wall: Wall,
    /// Position of the first stripe edge along the wall.
    pub offset_m: f64,
    /// Number of stripe edges (the pattern's frequency tag together with
    /// `spacing_m`).
    pub stripes: u32,
    pub spacing_m: f64,
    pub height_m: f64,
    /// Contrast sign: 1 emits ON events, 0 OFF events.
    pub polarity: u8,
}

impl Beacon {
    fn edges(&self, arena: &ArenaConfig) -> impl Iterator<Item = [f64; 2]> + '_ {
        let arena = *arena;
        (0..self.stripes).map(move |j| self.wall.point(&arena, self.offset_m + j as f64 * self.spacing_m))
    }

    fn pattern(&self) -> (u32, u64, u64, u8) {
        (
            self.stripes,
            (self.spacing_m * 1e6).round() as u64,
            (self.height_m * 1e6).round() as u64,
            self.polarity,
        )
    }
}

/// Three beacons per wall. Stripe count, spacing, height and polarity
/// differ between walls; heights also vary along each wall.
pub fn default_beacons(arena: &ArenaConfig, per_wall: usize) -> Vec<Beacon> {
    let stripes = [3, 5, 2, 4];
    let spacing = [0.12, 0.07, 0.20, 0.10];
    let height = [1.2, 0.8, 1.6, 1.0];
    let polarity = [1, 0, 1, 0];
    let mut out = Vec::new();
    for (w, wall) in Wall::ALL.into_iter().enumerate() {
        let len = wall.length(arena);
        for b in 0..per_wall {
            let rel = if per_wall > 1 { b as f64 / (per_wall - 1) as f64 } else { 0.5 };
            let frac = 0.2 + 0.6 * rel;
            let width = (stripes[w] - 1) as f64 * spacing[w];
            out.push(Beacon {
                wall,
                offset_m: frac * len - width / 2.0,
                stripes: stripes[w],
                spacing_m: spacing[w],
                height_m: height[w] * (1.0 + 0.6 * rel),
                polarity: polarity[w],
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    /// Empty means [`default_beacons`] with `beacons_per_wall` each.
    pub beacons: Vec<Beacon>,
    pub beacons_per_wall: usize,
    /// Fraction of edge events that survive, in (0, 1].
    pub illumination: f64,
    /// Background events per pixel per second.
    pub noise_rate: f64,
    /// Events per covered pixel row per pixel of column motion at full
    /// illumination.
    pub event_gain: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            beacons: Vec::new(),
            beacons_per_wall: 3,
            illumination: 1.0,
            noise_rate: 0.1,
            event_gain: 2.0,
        }
    }
}

impl SceneSpec {
    /// The low-light recording variant.
    pub fn dimmed(&self) -> Self {
        Self {
            illumination: 0.4,
            noise_rate: self.noise_rate * 2.0,
            ..self.clone()
        }
    }

    pub fn effective_beacons(&self, arena: &ArenaConfig) -> Vec<Beacon> {
        if self.beacons.is_empty() {
            default_beacons(arena, self.beacons_per_wall)
        } else {
            self.beacons.clone()
        }
    }

    pub fn validate(&self, arena: &ArenaConfig) -> Result<()> {
        if !(self.illumination > 0.0 && self.illumination <= 1.0) {
            return Err(Error::Config(format!("illumination {} outside (0, 1]", self.illumination)));
        }
        if !(self.noise_rate >= 0.0) || !(self.event_gain >= 0.0) {
            return Err(Error::Config("noise rate and event gain must be non-negative".into()));
        }
        let beacons = self.effective_beacons(arena);
        if beacons.is_empty() {
            return Err(Error::Config("scene has no beacons".into()));
        }
        let mut patterns: Vec<(Wall, Vec<_>)> = Vec::new();
        for b in &beacons {
            if b.polarity > 1 || b.stripes == 0 || !(b.height_m > 0.0) || b.spacing_m < 0.0 {
                return Err(Error::Config(format!("malformed beacon {b:?}")));
            }
            let len = b.wall.length(arena);
            let last = b.offset_m + (b.stripes - 1) as f64 * b.spacing_m;
            if b.offset_m < 0.0 || last > len {
                return Err(Error::Config(format!("beacon {b:?} does not fit its wall")));
            }
            match patterns.iter_mut().find(|(w, _)| *w == b.wall) {
                Some((_, v)) => v.push(b.pattern()),
                None => patterns.push((b.wall, vec![b.pattern()])),
            }
        }
        for (_, v) in patterns.iter_mut() {
            v.sort();
        }
        for i in 0..patterns.len() {
            for j in i + 1..patterns.len() {
                if patterns[i].1 == patterns[j].1 {
                    return Err(Error::Config(format!(
                        "walls {:?} and {:?} carry identical beacon patterns",
                        patterns[i].0, patterns[j].0
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSpec {
    pub width: u16,
    pub height: u16,
    pub hfov_deg: f64,
    pub mount_height_m: f64,
}

impl Default for CameraSpec {
    /// DAVIS346 geometry.
    fn default() -> Self {
        Self {
            width: 346,
            height: 260,
            hfov_deg: 70.0,
            mount_height_m: 0.3,
        }
    }
}

impl CameraSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(Error::Config(format!("invalid camera {self:?}")));
        }
        Ok(())
    }

    fn focal(&self) -> f64 {
        self.width as f64 / 2.0 / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    /// Image column of a floor point and its depth along the optical axis,
    /// or `None` behind the camera.
    fn column(&self, pose: &Pose, p: [f64; 2]) -> Option<(f64, f64)> {
        let (dx, dy) = (p[0] - pose.x, p[1] - pose.y);
        let (s, c) = pose.yaw.sin_cos();
        let fwd = dx * c + dy * s;
        let left = -dx * s + dy * c;
        if fwd < 0.05 {
            return None;
        }
        Some((self.width as f64 / 2.0 - self.focal() * left / fwd, fwd))
    }

    fn row(&self, z: f64, depth: f64) -> f64 {
        self.height as f64 / 2.0 - self.focal() * (z - self.mount_height_m) / depth
    }
}

/// Renders the event stream seen along `poses`. Signal and noise use
/// separate random streams derived from `seed`.
pub fn render_events(
    poses: &[PoseSample],
    scene: &SceneSpec,
    arena: &ArenaConfig,
    camera: &CameraSpec,
    seed: u64,
) -> Result<EventStream> {
    scene.validate(arena)?;
    camera.validate()?;
    let beacons = scene.effective_beacons(arena);
    let edges: Vec<([f64; 2], f64, u8)> = beacons
        .iter()
        .flat_map(|b| b.edges(arena).map(move |e| (e, b.height_m, b.polarity)))
        .collect();
    let mut signal = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    noise.set_stream(1);
    let (w, h) = (camera.width as f64, camera.height as f64);
    let mut stream = EventStream::new(camera.width, camera.height);

    for pair in poses.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.t_us < a.t_us {
            return Err(Error::TimestampRegression {
                index: 1,
                t_us: b.t_us,
                prev_us: a.t_us,
            });
        }
        let dt = (b.t_us - a.t_us) as f64;
        if dt == 0.0 {
            continue;
        }
        for &(edge, height, polarity) in &edges {
            let (Some((u0, d0)), Some((u1, d1))) = (camera.column(&a.pose, edge), camera.column(&b.pose, edge)) else {
                continue;
            };
            if u0.min(u1) < 0.0 || u0.max(u1) >= w {
                continue;
            }
            let du = u1 - u0;
            let (top0, bot0) = (camera.row(height, d0), camera.row(0.0, d0));
            let (top1, bot1) = (camera.row(height, d1), camera.row(0.0, d1));
            let rows = ((bot0 + bot1) / 2.0).min(h) - ((top0 + top1) / 2.0).max(0.0);
            let lambda = scene.event_gain * du.abs() * rows.max(0.0);
            if lambda <= 0.0 {
                continue;
            }
            let count = Poisson::new(lambda).map_err(|e| Error::Config(e.to_string()))?.sample(&mut signal) as u64;
            for _ in 0..count {
                let s: f64 = signal.random();
                let r: f64 = signal.random();
                let keep: f64 = signal.random();
                if keep >= scene.illumination {
                    continue;
                }
                let u = u0 + s * du;
                let top = (top0 + s * (top1 - top0)).max(0.0);
                let bot = (bot0 + s * (bot1 - bot0)).min(h);
                let v = top + r * (bot - top);
                if bot <= top || v < 0.0 || v >= h {
                    continue;
                }
                stream.events.push(Event {
                    t_us: a.t_us + ((s * dt) as u64).min(b.t_us - a.t_us - 1),
                    x: u as u16,
                    y: v as u16,
                    polarity,
                });
            }
        }
        if scene.noise_rate > 0.0 {
            let lambda = scene.noise_rate * w * h * dt * 1e-6;
            let count = Poisson::new(lambda).map_err(|e| Error::Config(e.to_string()))?.sample(&mut noise) as u64;
            for _ in 0..count {
                stream.events.push(Event {
                    t_us: a.t_us + noise.random_range(0..b.t_us - a.t_us),
                    x: noise.random_range(0..camera.width),
                    y: noise.random_range(0..camera.height),
                    polarity: noise.random_range(0..2),
                });
            }
        }
    }
    stream.events.sort();
    Ok(stream)
}
