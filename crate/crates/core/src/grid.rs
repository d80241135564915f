//! Fixed-step time grids and grid-to-grid resampling.
//!
//! Two grids coexist everywhere: the planner grid (1 h steps) and the MPC
//! grid (15 min steps). Series move between them by piecewise-constant hold
//! (coarse to fine) and arithmetic mean (fine to coarse).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds in one hour.
pub const HOUR_S: i64 = 3600;
/// Seconds in one MPC step (15 min).
pub const MPC_STEP_S: i64 = 900;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("source grid does not cover target span: source [{src_start}, {src_end}), target [{tgt_start}, {tgt_end})")]
    SpanNotCovered {
        src_start: i64,
        src_end: i64,
        tgt_start: i64,
        tgt_end: i64,
    },
    #[error("grid steps are not integer multiples of each other: {0} s vs {1} s")]
    IncompatibleSteps(i64, i64),
    #[error("grid starts differ by a non-multiple of the finer step: {0} s vs {1} s")]
    MisalignedStarts(i64, i64),
    #[error("series length {len} does not match grid count {count}")]
    LengthMismatch { len: usize, count: usize },
}

/// A uniform time grid: `count` steps of `step_s` seconds starting at `start_s`.
///
/// Timestamps are plain seconds on a fixed axis; there is no calendar or
/// timezone arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start_s: i64,
    pub step_s: i64,
    pub count: usize,
}

impl TimeGrid {
    pub fn new(start_s: i64, step_s: i64, count: usize) -> Self {
        assert!(step_s > 0, "grid step must be positive");
        assert!(count >= 1, "grid must have at least one step");
        Self {
            start_s,
            step_s,
            count,
        }
    }

    /// Timestamp of step `i` (start of the interval).
    pub fn at(&self, i: usize) -> i64 {
        self.start_s + self.step_s * i as i64
    }

    /// One past the end of the covered span.
    pub fn end_s(&self) -> i64 {
        self.at(self.count)
    }

    /// Step duration in hours.
    pub fn step_hours(&self) -> f64 {
        self.step_s as f64 / HOUR_S as f64
    }

    /// Index of the step whose interval contains `t_s`, if any.
    pub fn index_of(&self, t_s: i64) -> Option<usize> {
        if t_s < self.start_s || t_s >= self.end_s() {
            return None;
        }
        Some(((t_s - self.start_s) / self.step_s) as usize)
    }

    /// Sub-grid of `count` steps starting at step `offset`.
    pub fn window(&self, offset: usize, count: usize) -> TimeGrid {
        assert!(offset + count <= self.count, "window out of range");
        TimeGrid::new(self.at(offset), self.step_s, count)
    }
}

/// Resample a series from `src` onto `target`.
///
/// Coarse to fine holds each value constant over its interval; fine to
/// coarse takes the arithmetic mean of the covered fine steps. The source
/// span must cover the target span and the steps must divide evenly.
pub fn resample_hold(series: &[f64], src: &TimeGrid, target: &TimeGrid) -> Result<Vec<f64>, GridError> {
    if series.len() != src.count {
        return Err(GridError::LengthMismatch {
            len: series.len(),
            count: src.count,
        });
    }
    if target.start_s < src.start_s || target.end_s() > src.end_s() {
        return Err(GridError::SpanNotCovered {
            src_start: src.start_s,
            src_end: src.end_s(),
            tgt_start: target.start_s,
            tgt_end: target.end_s(),
        });
    }

    let fine = src.step_s.min(target.step_s);
    if src.step_s % fine != 0 || target.step_s % fine != 0 {
        return Err(GridError::IncompatibleSteps(src.step_s, target.step_s));
    }
    if (target.start_s - src.start_s) % fine != 0 {
        return Err(GridError::MisalignedStarts(src.start_s, target.start_s));
    }

    let mut out = Vec::with_capacity(target.count);
    if target.step_s <= src.step_s {
        // Hold: each target step lies inside exactly one source step.
        if src.step_s % target.step_s != 0 {
            return Err(GridError::IncompatibleSteps(src.step_s, target.step_s));
        }
        for i in 0..target.count {
            let t = target.at(i);
            let j = ((t - src.start_s) / src.step_s) as usize;
            out.push(series[j]);
        }
    } else {
        // Mean: each target step covers an integer number of source steps.
        if target.step_s % src.step_s != 0 {
            return Err(GridError::IncompatibleSteps(src.step_s, target.step_s));
        }
        let ratio = (target.step_s / src.step_s) as usize;
        for i in 0..target.count {
            let t = target.at(i);
            if (t - src.start_s) % src.step_s != 0 {
                return Err(GridError::MisalignedStarts(src.start_s, target.start_s));
            }
            let j0 = ((t - src.start_s) / src.step_s) as usize;
            let sum: f64 = series[j0..j0 + ratio].iter().sum();
            out.push(sum / ratio as f64);
        }
    }
    Ok(out)
}
