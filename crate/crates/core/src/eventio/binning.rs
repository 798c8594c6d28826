//! Dense event-frame histograms.

use serde::{Deserialize, Serialize};

use super::Event;
use crate::error::{Error, Result};

/// Sensor-space rectangle kept before downsampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crop {
    pub x0: u16,
    pub y0: u16,
    pub width: u16,
    pub height: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinningConfig {
    pub window_us: u64,
    pub frames: usize,
    /// `None` keeps the full sensor.
    pub crop: Option<Crop>,
    /// Output is `output_size` x `output_size`; each crop side must be an
    /// integer multiple of it.
    pub output_size: usize,
    /// Per-pixel count cap; 1 gives binary frames.
    pub clip_cap: u8,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self {
            window_us: 2000,
            frames: 50,
            crop: None,
            output_size: 128,
            clip_cap: 1,
        }
    }
}

impl BinningConfig {
    pub fn span_us(&self) -> u64 {
        self.window_us * self.frames as u64
    }

    fn resolve_crop(&self, width: u16, height: u16) -> Crop {
        self.crop.unwrap_or(Crop {
            x0: 0,
            y0: 0,
            width,
            height,
        })
    }

    /// Checks the config against a sensor; returns the crop and the
    /// horizontal/vertical downsampling factors.
    pub fn validate(&self, width: u16, height: u16) -> Result<(Crop, usize, usize)> {
        if self.window_us == 0 || self.frames == 0 || self.output_size == 0 || self.clip_cap == 0 {
            return Err(Error::Config(format!("binning parameters must be positive: {self:?}")));
        }
        let c = self.resolve_crop(width, height);
        if c.width == 0
            || c.height == 0
            || c.x0 as u32 + c.width as u32 > width as u32
            || c.y0 as u32 + c.height as u32 > height as u32
        {
            return Err(Error::Config(format!("crop {c:?} outside {width}x{height} sensor")));
        }
        let (cw, ch) = (c.width as usize, c.height as usize);
        if cw % self.output_size != 0 || ch % self.output_size != 0 {
            return Err(Error::Config(format!(
                "crop {cw}x{ch} is not an integer multiple of output size {}",
                self.output_size
            )));
        }
        Ok((c, cw / self.output_size, ch / self.output_size))
    }
}

/// `[T, 2, H, W]` clipped event counts; channel 0 is OFF, 1 is ON.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frames {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Frames {
    pub const CHANNELS: usize = 2;

    pub fn zeros(t: usize, h: usize, w: usize) -> Self {
        Self {
            t,
            h,
            w,
            data: vec![0; t * Self::CHANNELS * h * w],
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.t, Self::CHANNELS, self.h, self.w]
    }

    pub fn index(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        ((t * Self::CHANNELS + c) * self.h + y) * self.w + x
    }

    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> u8 {
        self.data[self.index(t, c, y, x)]
    }

    pub fn total(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }
}

/// Bookkeeping for events that did not make it into the tensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BinStats {
    pub binned: u64,
    pub outside_window: u64,
    pub outside_crop: u64,
    /// Counts lost to the per-pixel cap.
    pub clipped: u64,
}

/// Histograms the events of `[t_start, t_start + frames * window_us)` into
/// frames. Event `t` goes to frame `(t - t_start) / window_us`. `events`
/// must be sorted by time.
pub fn bin_events(
    events: &[Event],
    sensor: (u16, u16),
    t_start: u64,
    cfg: &BinningConfig,
) -> Result<(Frames, BinStats)> {
    let (crop, fx, fy) = cfg.validate(sensor.0, sensor.1)?;
    let n = cfg.output_size;
    let mut frames = Frames::zeros(cfg.frames, n, n);
    let mut stats = BinStats::default();
    let t_end = t_start.saturating_add(cfg.span_us());

    let lo = events.partition_point(|e| e.t_us < t_start);
    let hi = events.partition_point(|e| e.t_us < t_end);
    stats.outside_window = (events.len() - (hi - lo)) as u64;

    let cap = cfg.clip_cap;
    for e in &events[lo..hi] {
        let (x, y) = (e.x as usize, e.y as usize);
        let (x0, y0) = (crop.x0 as usize, crop.y0 as usize);
        if x < x0 || y < y0 || x >= x0 + crop.width as usize || y >= y0 + crop.height as usize {
            stats.outside_crop += 1;
            continue;
        }
        let f = ((e.t_us - t_start) / cfg.window_us) as usize;
        let i = frames.index(f, (e.polarity & 1) as usize, (y - y0) / fy, (x - x0) / fx);
        if frames.data[i] < cap {
            frames.data[i] += 1;
        } else {
            stats.clipped += 1;
        }
        stats.binned += 1;
    }
    Ok((frames, stats))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ev(t_us: u64, x: u16, y: u16, polarity: u8) -> Event {
        Event { t_us, x, y, polarity }
    }

    fn small(frames: usize, cap: u8) -> BinningConfig {
        BinningConfig {
            window_us: 2000,
            frames,
            crop: None,
            output_size: 4,
            clip_cap: cap,
        }
    }

    #[test]
    fn empty_stream_gives_zero_tensor() {
        let (f, s) = bin_events(&[], (4, 4), 0, &small(3, 1)).unwrap();
        assert_eq!(f.shape(), [3, 2, 4, 4]);
        assert_eq!(f.total(), 0);
        assert_eq!(s, BinStats::default());
    }

    #[test]
    fn frame_index_examples() {
        let t0 = 10_000;
        let (f, _) = bin_events(&[ev(t0 + 3100, 1, 2, 1)], (4, 4), t0, &small(3, 1)).unwrap();
        assert_eq!(f.get(1, 1, 2, 1), 1);
        assert_eq!(f.total(), 1);

        let (f, _) = bin_events(&[ev(t0 + 2000, 0, 0, 0)], (4, 4), t0, &small(3, 1)).unwrap();
        assert_eq!(f.get(1, 0, 0, 0), 1);
        assert_eq!(f.get(0, 0, 0, 0), 0);
    }

    #[test]
    fn window_is_half_open_at_both_ends() {
        let events = [ev(999, 0, 0, 0), ev(1000, 0, 0, 0), ev(6999, 1, 0, 0), ev(7000, 2, 0, 0)];
        let (f, s) = bin_events(&events, (4, 4), 1000, &small(3, 1)).unwrap();
        assert_eq!(f.get(0, 0, 0, 0), 1);
        assert_eq!(f.get(2, 0, 0, 1), 1);
        assert_eq!(s.binned, 2);
        assert_eq!(s.outside_window, 2);
    }

    #[test]
    fn crop_and_downsample_count_events() {
        // 8x6 sensor, crop the 4x4 block at (2, 1), output 2x2 (factor 2).
        let cfg = BinningConfig {
            window_us: 100,
            frames: 1,
            crop: Some(Crop { x0: 2, y0: 1, width: 4, height: 4 }),
            output_size: 2,
            clip_cap: 255,
        };
        let events = [ev(0, 2, 1, 1), ev(1, 3, 2, 1), ev(2, 5, 4, 0), ev(3, 1, 1, 1), ev(4, 6, 1, 1)];
        let (f, s) = bin_events(&events, (8, 6), 0, &cfg).unwrap();
        assert_eq!(f.get(0, 1, 0, 0), 2);
        assert_eq!(f.get(0, 0, 1, 1), 1);
        assert_eq!(s.outside_crop, 2);
        assert_eq!(f.total(), 3);
    }

    #[test]
    fn cap_clips_counts() {
        let events: Vec<_> = (0..5).map(|t| ev(t, 0, 0, 1)).collect();
        let (f, s) = bin_events(&events, (4, 4), 0, &small(1, 1)).unwrap();
        assert_eq!(f.get(0, 1, 0, 0), 1);
        assert_eq!(s.clipped, 4);
        let (f, _) = bin_events(&events, (4, 4), 0, &small(1, 3)).unwrap();
        assert_eq!(f.get(0, 1, 0, 0), 3);
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let mut cfg = small(1, 1);
        cfg.output_size = 3;
        assert!(bin_events(&[], (4, 4), 0, &cfg).is_err());
        cfg.output_size = 2;
        cfg.crop = Some(Crop { x0: 2, y0: 0, width: 4, height: 4 });
        assert!(bin_events(&[], (4, 4), 0, &cfg).is_err());
    }

    fn arb_events() -> impl Strategy<Value = Vec<Event>> {
        proptest::collection::vec((0u64..20_000, 0u16..8, 0u16..8, 0u8..2), 0..200).prop_map(|mut v| {
            v.sort();
            v.into_iter().map(|(t, x, y, p)| ev(t, x, y, p)).collect()
        })
    }

    proptest! {
        #[test]
        fn clipping_only_reduces(events in arb_events(), t0 in 0u64..10_000, cap in 1u8..4) {
            let cfg = BinningConfig { output_size: 4, frames: 3, clip_cap: cap, ..small(3, cap) };
            let (f, s) = bin_events(&events, (8, 8), t0, &cfg).unwrap();
            let in_window = events.iter().filter(|e| e.t_us >= t0 && e.t_us < t0 + 6000).count() as u64;
            prop_assert!(f.total() <= in_window);
            prop_assert_eq!(f.total() + s.clipped, in_window);
            prop_assert!(f.data.iter().all(|&v| v <= cap));
        }

        #[test]
        fn binning_is_time_translation_equivariant(events in arb_events(), t0 in 0u64..10_000, shift in 0u64..1_000_000_000) {
            let cfg = small(4, 2);
            let shifted: Vec<_> = events.iter().map(|e| Event { t_us: e.t_us + shift, ..*e }).collect();
            let (a, sa) = bin_events(&events, (4, 4), t0, &cfg).unwrap();
            let (b, sb) = bin_events(&shifted, (4, 4), t0 + shift, &cfg).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(sa, sb);
        }
    }
}
