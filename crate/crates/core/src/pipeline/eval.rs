//! Error metrics against ground truth.

use crate::geodesy::{self, EllipsoidModel, GeodeticPosition};
use crate::pipeline::io::TruthRecord;
use crate::pipeline::run::TraceEpoch;
use crate::pipeline::PipelineError;

/// Per-epoch estimate-minus-truth error in meters plus the filter's 3-sigma
/// bounds (north, east, up).
#[derive(Debug, Clone, Copy)]
pub struct ErrorEpoch {
    pub time: f64,
    pub north: f64,
    pub east: f64,
    pub up: f64,
    pub sigma3_north: f64,
    pub sigma3_east: f64,
    pub sigma3_up: f64,
}

impl ErrorEpoch {
    pub fn horizontal(&self) -> f64 {
        (self.north * self.north + self.east * self.east).sqrt()
    }

    /// Whether the truth lies inside the horizontal 3-sigma hull.
    pub fn inside_3sigma(&self) -> bool {
        let bound = (self.sigma3_north * self.sigma3_north
            + self.sigma3_east * self.sigma3_east)
            .sqrt();
        self.horizontal() <= bound
    }
}

/// Summary statistics for one run, matching the usual report columns:
/// horizontal median/STD/max plus per-axis RMS.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub label: String,
    pub horizontal_median: f64,
    pub horizontal_std: f64,
    pub horizontal_max: f64,
    pub rms_east: f64,
    pub rms_north: f64,
    pub rms_up: f64,
    pub epochs: Vec<ErrorEpoch>,
}

fn interpolate_truth(truth: &[TruthRecord], t: f64) -> Option<TruthRecord> {
    if truth.is_empty() || t < truth[0].time || t > truth[truth.len() - 1].time {
        return None;
    }
    let idx = truth.partition_point(|r| r.time <= t);
    if idx == 0 {
        return Some(truth[0]);
    }
    if idx >= truth.len() {
        return Some(truth[truth.len() - 1]);
    }
    let (a, b) = (&truth[idx - 1], &truth[idx]);
    let span = b.time - a.time;
    if span <= 0.0 {
        return Some(*a);
    }
    let w = (t - a.time) / span;
    let lerp = |x: f64, y: f64| x + w * (y - x);
    Some(TruthRecord {
        time: t,
        position: GeodeticPosition {
            latitude: lerp(a.position.latitude, b.position.latitude),
            longitude: lerp(a.position.longitude, b.position.longitude),
            height: lerp(a.position.height, b.position.height),
        },
        roll: lerp(a.roll, b.roll),
        pitch: lerp(a.pitch, b.pitch),
        yaw: lerp(a.yaw, b.yaw),
        velocity_ned: a.velocity_ned + (b.velocity_ned - a.velocity_ned) * w,
    })
}

/// Compares an estimate trace against (interpolated) truth.
pub fn evaluate(
    label: &str,
    trace: &[TraceEpoch],
    truth: &[TruthRecord],
    model: &EllipsoidModel,
) -> Result<ErrorReport, PipelineError> {
    let mut epochs = Vec::with_capacity(trace.len());
    for e in trace {
        let Some(reference) = interpolate_truth(truth, e.time) else {
            continue;
        };
        let delta = geodesy::ned_delta(&reference.position, &e.nav.position, model)?;
        epochs.push(ErrorEpoch {
            time: e.time,
            north: delta[0],
            east: delta[1],
            up: delta[2],
            sigma3_north: e.sigma3_ned[0],
            sigma3_east: e.sigma3_ned[1],
            sigma3_up: e.sigma3_ned[2],
        });
    }
    if epochs.is_empty() {
        return Err(PipelineError::NoOverlap);
    }

    let mut horizontal: Vec<f64> = epochs.iter().map(|e| e.horizontal()).collect();
    horizontal.sort_by(|a, b| a.total_cmp(b));
    let n = horizontal.len();
    let median = if n % 2 == 1 {
        horizontal[n / 2]
    } else {
        0.5 * (horizontal[n / 2 - 1] + horizontal[n / 2])
    };
    let mean = horizontal.iter().sum::<f64>() / n as f64;
    let std = (horizontal.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let max = *horizontal.last().unwrap();
    let rms = |f: fn(&ErrorEpoch) -> f64| -> f64 {
        (epochs.iter().map(|e| f(e).powi(2)).sum::<f64>() / n as f64).sqrt()
    };

    Ok(ErrorReport {
        label: label.to_string(),
        horizontal_median: median,
        horizontal_std: std,
        horizontal_max: max,
        rms_east: rms(|e| e.east),
        rms_north: rms(|e| e.north),
        rms_up: rms(|e| e.up),
        epochs,
    })
}

/// Least-squares fit of `y ~ a * t^degree` (single monomial through the
/// origin); returns `(a, rms_residual)`.
pub fn fit_monomial(times: &[f64], values: &[f64], degree: i32) -> (f64, f64) {
    assert_eq!(times.len(), values.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, y) in times.iter().zip(values) {
        let basis = t.powi(degree);
        num += y * basis;
        den += basis * basis;
    }
    let a = if den > 0.0 { num / den } else { 0.0 };
    let ss: f64 = times
        .iter()
        .zip(values)
        .map(|(t, y)| (y - a * t.powi(degree)).powi(2))
        .sum();
    (a, (ss / times.len().max(1) as f64).sqrt())
}

/// Residual ratio `rms(linear fit) / rms(cubic fit)`; large values mean the
/// series grows cubically, values below one mean linear growth fits better.
pub fn monomial_residual_ratio(times: &[f64], values: &[f64]) -> f64 {
    let (_, r1) = fit_monomial(times, values, 1);
    let (_, r3) = fit_monomial(times, values, 3);
    if r3 > 0.0 {
        r1 / r3
    } else {
        f64::INFINITY
    }
}
