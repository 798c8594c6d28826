//! Deterministic synthetic arena recordings: a robot loops the arena while
//! wall beacons generate events on a simulated camera.

mod render;
mod trajectory;

use serde::{Deserialize, Serialize};

pub use render::{default_beacons, render_events, Beacon, CameraSpec, SceneSpec, Wall};
pub use trajectory::{generate_trajectory, TrajectorySpec, POSE_PERIOD_US};

use crate::error::Result;
use crate::eventio::{ArenaConfig, EventStream, PoseSample};

/// Everything needed to synthesize one recording.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub camera: CameraSpec,
    /// Renders the low-light variant of `scene`.
    pub dim: bool,
}

/// Poses and events for one recording; the event seed is derived from the
/// trajectory seed.
pub fn synthesize(cfg: &SynthConfig, arena: &ArenaConfig) -> Result<(Vec<PoseSample>, EventStream)> {
    let poses = generate_trajectory(&cfg.trajectory, arena)?;
    let scene = if cfg.dim { cfg.scene.dimmed() } else { cfg.scene.clone() };
    let events = render_events(&poses, &scene, arena, &cfg.camera, cfg.trajectory.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    Ok((poses, events))
}
