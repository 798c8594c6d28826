//! Event recordings, pose logs, frame binning and arena cell labels.

mod binning;
mod format;
mod samples;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use binning::{bin_events, BinStats, BinningConfig, Crop, Frames};
pub use format::{
    load_events, load_poses, read_binary, read_csv, write_binary, write_csv, write_events, write_poses,
    EventFormat,
};
pub use samples::{interpolate_pose, make_samples, EventSample, SampleSet, SamplingConfig};

/// One camera event. `polarity` is 1 for ON, 0 for OFF.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: u8,
}

/// Time-ordered events from a sensor of known size.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    pub width: u16,
    pub height: u16,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(width: u16, height: u16) -> Self {
        Self {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_t(&self) -> Option<u64> {
        self.events.first().map(|e| e.t_us)
    }

    pub fn last_t(&self) -> Option<u64> {
        self.events.last().map(|e| e.t_us)
    }

    /// Checks ordering, pixel bounds and polarity values.
    pub fn validate(&self) -> Result<()> {
        let mut prev = 0;
        for (i, e) in self.events.iter().enumerate() {
            if e.t_us < prev {
                return Err(Error::TimestampRegression {
                    index: i,
                    t_us: e.t_us,
                    prev_us: prev,
                });
            }
            prev = e.t_us;
            if e.x >= self.width || e.y >= self.height || e.polarity > 1 {
                return Err(Error::Config(format!(
                    "event {i} at ({}, {}) polarity {} outside {}x{} sensor",
                    e.x, e.y, e.polarity, self.width, self.height
                )));
            }
        }
        Ok(())
    }
}

/// Planar robot pose in arena coordinates (metres, radians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSample {
    pub t_us: u64,
    pub pose: Pose,
}

/// Rectangular arena split into a regular grid of labelled cells, origin
/// at one corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArenaConfig {
    pub width_m: f64,
    pub height_m: f64,
    pub grid_cols: usize,
    pub grid_rows: usize,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            width_m: 6.0,
            height_m: 4.0,
            grid_cols: 4,
            grid_rows: 4,
        }
    }
}

impl ArenaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.width_m > 0.0 && self.height_m > 0.0) || self.grid_cols == 0 || self.grid_rows == 0 {
            return Err(Error::Config(format!("degenerate arena {self:?}")));
        }
        Ok(())
    }

    pub fn cell_size(&self) -> (f64, f64) {
        (
            self.width_m / self.grid_cols as f64,
            self.height_m / self.grid_rows as f64,
        )
    }

    pub fn num_cells(&self) -> usize {
        self.grid_cols * self.grid_rows
    }

    pub fn cell_diagonal(&self) -> f64 {
        let (w, h) = self.cell_size();
        w.hypot(h)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width_m).contains(&x) && (0.0..=self.height_m).contains(&y)
    }
}

/// Grid cell containing `(x, y)`: `row * cols + col`. Cells are half-open
/// except along the far edges, which belong to the last row/column.
pub fn label_cell(x: f64, y: f64, arena: &ArenaConfig) -> Result<usize> {
    if !arena.contains(x, y) {
        return Err(Error::OutOfArena {
            x,
            y,
            width: arena.width_m,
            height: arena.height_m,
        });
    }
    let (cw, ch) = arena.cell_size();
    let col = ((x / cw).floor() as usize).min(arena.grid_cols - 1);
    let row = ((y / ch).floor() as usize).min(arena.grid_rows - 1);
    Ok(row * arena.grid_cols + col)
}
