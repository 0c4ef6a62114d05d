//! Player position traces, kinematics and grid coverage.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Regulation field length including end zones, in yards.
pub const FIELD_LENGTH: f64 = 120.0;
/// Regulation field width, in yards.
pub const FIELD_WIDTH: f64 = 53.3;
/// Samples this far outside the field are clamped and reported.
pub const BOUNDS_TOLERANCE: f64 = 0.5;

/// One position fix. Serialized as `[t, x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 3]> for Sample {
    fn from([t, x, y]: [f64; 3]) -> Self {
        Sample { t, x, y }
    }
}

impl From<Sample> for [f64; 3] {
    fn from(s: Sample) -> Self {
        [s.t, s.x, s.y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub play_id: String,
    pub player_id: String,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicSeries {
    /// Yards per second over each sample interval; length n-1.
    pub speeds: Vec<f64>,
    /// Yards per second squared between consecutive intervals; length n-2.
    pub accelerations: Vec<f64>,
    pub max_speed: f64,
    /// Total path length over total elapsed time.
    pub mean_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub cells_visited: usize,
    pub total_cells: usize,
    pub coverage_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrackingError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("timestamps must strictly increase (sample {index})")]
    NonMonotonicTime { index: usize },
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("cell size must be positive")]
    InvalidCellSize,
}

fn check_time(samples: &[Sample]) -> Result<(), TrackingError> {
    for (i, w) in samples.windows(2).enumerate() {
        // written so NaN also fails
        if !(w[1].t > w[0].t) {
            return Err(TrackingError::NonMonotonicTime { index: i + 1 });
        }
    }
    Ok(())
}

fn dist(a: &Sample, b: &Sample) -> f64 {
    libm::hypot(b.x - a.x, b.y - a.y)
}

/// Forward-difference speeds and the acceleration magnitude between
/// consecutive interval speeds, measured over the midpoint-to-midpoint gap.
pub fn derive_kinematics(trace: &Trace) -> Result<KinematicSeries, TrackingError> {
    let s = &trace.samples;
    if s.len() < 2 {
        return Err(TrackingError::TooFewSamples { needed: 2, got: s.len() });
    }
    check_time(s)?;
    let speeds: Vec<f64> = s.windows(2).map(|w| dist(&w[0], &w[1]) / (w[1].t - w[0].t)).collect();
    let accelerations: Vec<f64> =
        speeds.windows(2).zip(s.windows(3)).map(|(v, w)| libm::fabs(v[1] - v[0]) / ((w[2].t - w[0].t) / 2.0)).collect();
    let path: f64 = s.windows(2).map(|w| dist(&w[0], &w[1])).sum();
    let elapsed = s[s.len() - 1].t - s[0].t;
    Ok(KinematicSeries {
        max_speed: speeds.iter().copied().fold(0.0, f64::max),
        mean_speed: path / elapsed,
        speeds,
        accelerations,
    })
}

fn grid_dims(cell: f64) -> (i64, i64) {
    (libm::ceil(FIELD_LENGTH / cell) as i64, libm::ceil(FIELD_WIDTH / cell) as i64)
}

/// Cell index of a point, clamped into the field grid.
pub fn cell_of(x: f64, y: f64, cell: f64) -> (i64, i64) {
    let (nx, ny) = grid_dims(cell);
    let cx = (libm::floor(x / cell) as i64).clamp(0, nx - 1);
    let cy = (libm::floor(y / cell) as i64).clamp(0, ny - 1);
    (cx, cy)
}

/// Distinct grid cells touched by samples. No interpolation between samples.
pub fn field_coverage(trace: &Trace, cell_size: f64) -> Result<CoverageSummary, TrackingError> {
    if !(cell_size > 0.0) {
        return Err(TrackingError::InvalidCellSize);
    }
    if trace.samples.is_empty() {
        return Err(TrackingError::EmptyTrace);
    }
    let cells: BTreeSet<(i64, i64)> = trace.samples.iter().map(|s| cell_of(s.x, s.y, cell_size)).collect();
    let (nx, ny) = grid_dims(cell_size);
    let total = (nx * ny) as usize;
    Ok(CoverageSummary {
        cells_visited: cells.len(),
        total_cells: total,
        coverage_fraction: cells.len() as f64 / total as f64,
    })
}

/// Traces keyed by play and player, immutable once loaded.
#[derive(Debug, Clone, Default)]
pub struct TrackingStore {
    traces: Vec<Trace>,
}

impl TrackingStore {
    /// Validates timing, clamps samples into the field and stores the trace,
    /// replacing any previous trace for the same play and player. Returns the
    /// number of samples that lay beyond the bounds tolerance.
    pub fn insert(&mut self, mut trace: Trace) -> Result<usize, TrackingError> {
        if trace.samples.is_empty() {
            return Err(TrackingError::EmptyTrace);
        }
        check_time(&trace.samples)?;
        let mut far = 0;
        for s in &mut trace.samples {
            let outside = s.x < -BOUNDS_TOLERANCE
                || s.x > FIELD_LENGTH + BOUNDS_TOLERANCE
                || s.y < -BOUNDS_TOLERANCE
                || s.y > FIELD_WIDTH + BOUNDS_TOLERANCE;
            if outside {
                far += 1;
            }
            s.x = s.x.clamp(0.0, FIELD_LENGTH);
            s.y = s.y.clamp(0.0, FIELD_WIDTH);
        }
        match self.traces.iter_mut().find(|t| t.play_id == trace.play_id && t.player_id == trace.player_id) {
            Some(existing) => *existing = trace,
            None => self.traces.push(trace),
        }
        Ok(far)
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Traces matching every given filter, in insertion order.
    pub fn query_traces(&self, play_ids: Option<&[String]>, player_id: Option<&str>) -> Vec<&Trace> {
        self.traces
            .iter()
            .filter(|t| play_ids.is_none_or(|ids| ids.contains(&t.play_id)))
            .filter(|t| player_id.is_none_or(|p| t.player_id == p))
            .collect()
    }
}
