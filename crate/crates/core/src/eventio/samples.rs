//! Sliding-window samples with interpolated ground-truth poses.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bin_events, label_cell, ArenaConfig, BinningConfig, EventStream, Frames, Pose, PoseSample};
use crate::container::{Container, TensorData};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub binning: BinningConfig,
    /// Start-to-start distance; `None` means one sample span (no overlap).
    pub stride_us: Option<u64>,
    /// Largest tolerated distance between bracketing pose records.
    pub pose_tolerance_us: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            binning: BinningConfig::default(),
            stride_us: None,
            pose_tolerance_us: 50_000,
        }
    }
}

impl SamplingConfig {
    pub fn stride(&self) -> u64 {
        self.stride_us.unwrap_or_else(|| self.binning.span_us())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventSample {
    pub frames: Frames,
    pub t_start: u64,
    pub t_mid: u64,
    pub pose: Pose,
    pub cell: usize,
}

fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    if a > -PI && a <= PI {
        return a;
    }
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Linear interpolation of the pose log at `t_us`; yaw follows the
/// shorter arc. `poses` must be time-sorted.
pub fn interpolate_pose(poses: &[PoseSample], t_us: u64, tolerance_us: u64) -> Result<Pose> {
    let gap = |gap_us| Error::PoseGap {
        t_us,
        gap_us,
        tolerance_us,
    };
    let (first, last) = match (poses.first(), poses.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(gap(u64::MAX)),
    };
    if t_us < first.t_us {
        return Err(gap(first.t_us - t_us));
    }
    if t_us > last.t_us {
        return Err(gap(t_us - last.t_us));
    }
    let i = poses.partition_point(|p| p.t_us <= t_us);
    let a = &poses[i - 1];
    if a.t_us == t_us || i == poses.len() {
        return Ok(a.pose);
    }
    let b = &poses[i];
    let span = b.t_us - a.t_us;
    if span > tolerance_us {
        return Err(gap(span));
    }
    let s = (t_us - a.t_us) as f64 / span as f64;
    let dyaw = wrap_angle(b.pose.yaw - a.pose.yaw);
    Ok(Pose {
        x: a.pose.x + s * (b.pose.x - a.pose.x),
        y: a.pose.y + s * (b.pose.y - a.pose.y),
        yaw: wrap_angle(a.pose.yaw + s * dyaw),
    })
}

/// Cuts the stream into samples starting at its first event and every
/// `stride` after that, keeping only windows that end by the last event.
pub fn make_samples(
    stream: &EventStream,
    poses: &[PoseSample],
    arena: &ArenaConfig,
    cfg: &SamplingConfig,
) -> Result<Vec<EventSample>> {
    arena.validate()?;
    cfg.binning.validate(stream.width, stream.height)?;
    let stride = cfg.stride();
    if stride == 0 {
        return Err(Error::Config("sample stride must be positive".into()));
    }
    let span = cfg.binning.span_us();
    let (Some(first), Some(last)) = (stream.first_t(), stream.last_t()) else {
        return Ok(Vec::new());
    };
    let mut starts = Vec::new();
    let mut t = first;
    while t + span <= last + 1 {
        starts.push(t);
        t += stride;
    }
    starts
        .into_par_iter()
        .map(|t_start| {
            let t_mid = t_start + span / 2;
            let pose = interpolate_pose(poses, t_mid, cfg.pose_tolerance_us)?;
            let cell = label_cell(pose.x, pose.y, arena)?;
            let (frames, _) = bin_events(&stream.events, (stream.width, stream.height), t_start, &cfg.binning)?;
            Ok(EventSample {
                frames,
                t_start,
                t_mid,
                pose,
                cell,
            })
        })
        .collect()
}

/// A labelled, time-ordered sample collection as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub arena: ArenaConfig,
    pub binning: BinningConfig,
    pub samples: Vec<EventSample>,
}

#[derive(Serialize, Deserialize)]
struct SetConfig {
    arena: ArenaConfig,
    binning: BinningConfig,
}

#[derive(Serialize, Deserialize)]
struct SetMeta {
    t_start: Vec<u64>,
    t_mid: Vec<u64>,
    poses: Vec<[f64; 3]>,
    cells: Vec<usize>,
}

impl SampleSet {
    pub const KIND: &'static str = "samples";

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn per_cell_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.arena.num_cells()];
        for s in &self.samples {
            counts[s.cell] += 1;
        }
        counts
    }

    pub fn frame_shape(&self) -> [usize; 4] {
        let n = self.binning.output_size;
        [self.binning.frames, Frames::CHANNELS, n, n]
    }

    pub fn to_container(&self) -> Result<Container> {
        let shape = self.frame_shape();
        let per = shape.iter().product::<usize>();
        let mut data = Vec::with_capacity(per * self.len());
        for s in &self.samples {
            if s.frames.shape() != shape {
                return Err(Error::Container(format!(
                    "sample frames {:?} do not match {shape:?}",
                    s.frames.shape()
                )));
            }
            data.extend_from_slice(&s.frames.data);
        }
        let meta = SetMeta {
            t_start: self.samples.iter().map(|s| s.t_start).collect(),
            t_mid: self.samples.iter().map(|s| s.t_mid).collect(),
            poses: self.samples.iter().map(|s| [s.pose.x, s.pose.y, s.pose.yaw]).collect(),
            cells: self.samples.iter().map(|s| s.cell).collect(),
        };
        let config = SetConfig {
            arena: self.arena,
            binning: self.binning,
        };
        let mut c = Container::new(Self::KIND, serde_json::to_value(config)?, serde_json::to_value(meta)?);
        let mut full = vec![self.len()];
        full.extend_from_slice(&shape);
        c.push("frames", full, TensorData::U8(data))?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != Self::KIND {
            return Err(Error::Container(format!("expected a {} archive, found {:?}", Self::KIND, c.kind)));
        }
        let config: SetConfig = serde_json::from_value(c.config.clone())?;
        let meta: SetMeta = serde_json::from_value(c.meta.clone())?;
        let n = meta.cells.len();
        if meta.t_start.len() != n || meta.t_mid.len() != n || meta.poses.len() != n {
            return Err(Error::Container("sample metadata lengths disagree".into()));
        }
        let probe = SampleSet {
            arena: config.arena,
            binning: config.binning,
            samples: Vec::new(),
        };
        let shape = probe.frame_shape();
        let entry = c
            .get("frames")
            .ok_or_else(|| Error::Container("missing tensor frames".into()))?;
        let mut expected = vec![n];
        expected.extend_from_slice(&shape);
        let TensorData::U8(data) = &entry.data else {
            return Err(Error::Container("frames must be u8".into()));
        };
        if entry.shape != expected {
            return Err(Error::Container(format!("frames shape {:?}, expected {expected:?}", entry.shape)));
        }
        let per = shape.iter().product::<usize>();
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            if meta.cells[i] >= config.arena.num_cells() {
                return Err(Error::Container(format!("sample {i} has cell {} out of range", meta.cells[i])));
            }
            let [x, y, yaw] = meta.poses[i];
            samples.push(EventSample {
                frames: Frames {
                    t: shape[0],
                    h: shape[2],
                    w: shape[3],
                    data: data[i * per..(i + 1) * per].to_vec(),
                },
                t_start: meta.t_start[i],
                t_mid: meta.t_mid[i],
                pose: Pose { x, y, yaw },
                cell: meta.cells[i],
            });
        }
        Ok(SampleSet { samples, ..probe })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eventio::Event;

    fn pose(t_us: u64, x: f64, y: f64, yaw: f64) -> PoseSample {
        PoseSample { t_us, pose: Pose { x, y, yaw } }
    }

    fn cfg(frames: usize) -> SamplingConfig {
        SamplingConfig {
            binning: BinningConfig {
                window_us: 1000,
                frames,
                crop: None,
                output_size: 4,
                clip_cap: 1,
            },
            stride_us: None,
            pose_tolerance_us: 1_000_000,
        }
    }

    fn stream(ts: &[u64]) -> EventStream {
        EventStream {
            width: 4,
            height: 4,
            events: ts.iter().map(|&t| Event { t_us: t, x: (t % 4) as u16, y: 1, polarity: (t % 2) as u8 }).collect(),
        }
    }

    #[test]
    fn short_stream_gives_no_samples() {
        let poses = [pose(0, 1.0, 1.0, 0.0), pose(100_000, 1.0, 1.0, 0.0)];
        let s = make_samples(&stream(&[0, 500, 2998]), &poses, &ArenaConfig::default(), &cfg(3)).unwrap();
        assert!(s.is_empty());
        let s = make_samples(&stream(&[]), &poses, &ArenaConfig::default(), &cfg(3)).unwrap();
        assert!(s.is_empty());
        let s = make_samples(&stream(&[0, 500, 2999]), &poses, &ArenaConfig::default(), &cfg(3)).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn constant_pose_log_labels_everything_alike() {
        let poses = [pose(0, 2.0, 1.2, 0.3), pose(50_000, 2.0, 1.2, 0.3)];
        let ts: Vec<u64> = (0..40).map(|i| i * 1000 + 7).collect();
        let s = make_samples(&stream(&ts), &poses, &ArenaConfig::default(), &cfg(3)).unwrap();
        assert_eq!(s.len(), 13);
        assert!(s.iter().all(|x| x.cell == 5 && x.pose == poses[0].pose));
        assert_eq!(s[1].t_start - s[0].t_start, 3000);
        assert_eq!(s[0].t_mid, 1507);
    }

    #[test]
    fn stride_controls_overlap() {
        let poses = [pose(0, 1.0, 1.0, 0.0), pose(100_000, 1.0, 1.0, 0.0)];
        let ts: Vec<u64> = (0..10).map(|i| i * 1000).collect();
        let mut c = cfg(3);
        c.stride_us = Some(1000);
        let s = make_samples(&stream(&ts), &poses, &ArenaConfig::default(), &c).unwrap();
        assert_eq!(s.iter().map(|x| x.t_start).collect::<Vec<_>>(), vec![0, 1000, 2000, 3000, 4000, 5000, 6000]);
    }

    #[test]
    fn midpoint_interpolation() {
        let poses = [pose(0, 1.0, 0.5, 0.0), pose(10_000, 2.0, 1.5, 1.0)];
        let p = interpolate_pose(&poses, 5_000, 20_000).unwrap();
        assert_eq!((p.x, p.y, p.yaw), (1.5, 1.0, 0.5));
        let p = interpolate_pose(&poses, 2_500, 20_000).unwrap();
        assert!((p.x - 1.25).abs() < 1e-15 && (p.y - 0.75).abs() < 1e-15);
    }

    #[test]
    fn yaw_interpolates_across_the_branch_cut() {
        let poses = [pose(0, 0.0, 0.0, 3.0), pose(10, 0.0, 0.0, -3.0)];
        let p = interpolate_pose(&poses, 5, 100).unwrap();
        assert!((p.yaw.abs() - std::f64::consts::PI).abs() < 1e-12, "{}", p.yaw);
    }

    #[test]
    fn pose_gaps_are_errors() {
        let poses = [pose(0, 1.0, 1.0, 0.0), pose(200_000, 1.0, 1.0, 0.0)];
        assert!(matches!(
            interpolate_pose(&poses, 100_000, 50_000),
            Err(Error::PoseGap { gap_us: 200_000, .. })
        ));
        assert!(interpolate_pose(&poses, 300_000, 50_000).is_err());
        assert!(interpolate_pose(&poses, 200_000, 50_000).is_ok());
    }

    #[test]
    fn archive_round_trip_is_exact() {
        let poses = [pose(0, 0.3, 0.2, 0.1), pose(40_000, 5.7, 3.9, -2.0)];
        let ts: Vec<u64> = (0..30).map(|i| i * 1100 + 3).collect();
        let samples = make_samples(&stream(&ts), &poses, &ArenaConfig::default(), &cfg(3)).unwrap();
        let set = SampleSet {
            arena: ArenaConfig::default(),
            binning: cfg(3).binning,
            samples,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.gvae");
        set.save(&path).unwrap();
        let back = SampleSet::load(&path).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.per_cell_counts().iter().sum::<usize>(), set.len());
        let empty = SampleSet { samples: Vec::new(), ..set };
        empty.save(&path).unwrap();
        assert!(SampleSet::load(&path).unwrap().is_empty());
    }
}
