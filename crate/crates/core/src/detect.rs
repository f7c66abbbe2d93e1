//! Bifurcation detection and the early-stop verdict.
//!
//! The protocol reads two signals: a displacement curve that rises while the
//! weights diffuse and falls once they settle, and a density movie whose
//! consecutive-frame Wasserstein distance collapses when the distribution
//! freezes. `stationary` is only reported when the fall (the peak) comes
//! first and the density stays quiet afterwards.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stats::{BimodalityReport, DensityMovie, MsdCurve};

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DetectorConfig {
    /// theta: a peak fires once the curve drops below theta * peak value.
    pub drop_fraction: f32,
    /// m: consecutive sub-threshold values required after the peak.
    pub persistence: usize,
    /// w: consecutive quiet density transitions required for stationarity.
    pub stationarity_window: usize,
    /// epsilon: quiet means W1 below this, on unit-range normalized grids.
    pub stationarity_eps: f32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            drop_fraction: 0.5,
            persistence: 3,
            stationarity_window: 5,
            stationarity_eps: 1e-3,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.drop_fraction > 0.0 && self.drop_fraction < 1.0) {
            return Err(Error::InvalidConfig("drop_fraction must be in (0, 1)".into()));
        }
        if self.persistence == 0 || self.stationarity_window == 0 {
            return Err(Error::InvalidConfig("persistence and window must be >= 1".into()));
        }
        if self.stationarity_eps <= 0.0 {
            return Err(Error::InvalidConfig("stationarity_eps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Diffusive,
    Peaked,
    Stationary,
}

/// One density transition's distance, recorded at the later step.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Evidence {
    pub step: u64,
    pub w1: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StopSignal {
    pub status: Status,
    pub peak_step: Option<u64>,
    pub stop_step: Option<u64>,
    pub msd_peak_value: f32,
    pub evidence: Vec<Evidence>,
}

/// Find the MSD peak: the running maximum that is followed by
/// `persistence` consecutive values below `drop_fraction` times its height.
///
/// The scan is streaming: whenever a value exceeds the running maximum the
/// candidate moves forward, so an early bump whose threshold is only
/// undercut after a later, higher excursion never fires. Returns
/// (peak_index, peak_step).
pub fn detect_peak(curve: &MsdCurve, drop_fraction: f32, persistence: usize) -> Option<(usize, u64)> {
    let mut peak_idx = 0usize;
    let mut peak_val = f32::NEG_INFINITY;
    let mut below = 0usize;
    for (i, &v) in curve.values.iter().enumerate() {
        if v >= peak_val {
            peak_val = v;
            peak_idx = i;
            below = 0;
            continue;
        }
        if v < drop_fraction * peak_val {
            below += 1;
            if below >= persistence {
                return Some((peak_idx, curve.steps[peak_idx]));
            }
        } else {
            below = 0;
        }
    }
    None
}

/// 1-Wasserstein distance between two histograms on the same grid,
/// normalized to a unit-range axis: mean absolute CDF difference.
pub fn wasserstein1(a: &crate::stats::Histogram, b: &crate::stats::Histogram) -> f64 {
    debug_assert_eq!(a.edges, b.edges);
    let ca = a.cdf();
    let cb = b.cdf();
    let bins = ca.len() as f64;
    ca.iter().zip(&cb).map(|(x, y)| (x - y).abs()).sum::<f64>() / bins
}

fn transition_distances(movie: &DensityMovie) -> Vec<Evidence> {
    movie
        .histograms
        .windows(2)
        .zip(movie.steps.iter().skip(1))
        .map(|(pair, &step)| Evidence { step, w1: wasserstein1(&pair[0], &pair[1]) })
        .collect()
}

/// First step at which the previous `window` transitions were all quieter
/// than `eps`.
pub fn stationarity(movie: &DensityMovie, window: usize, eps: f32) -> Option<u64> {
    stationarity_from(&transition_distances(movie), &movie.steps, window, eps, 0)
}

/// As [`stationarity`], but only counting quiet windows whose transitions
/// all lie at or after `start_index`.
fn stationarity_from(
    distances: &[Evidence],
    steps: &[u64],
    window: usize,
    eps: f32,
    start_index: usize,
) -> Option<u64> {
    let mut run = 0usize;
    for (i, d) in distances.iter().enumerate() {
        // transition i is steps[i] -> steps[i+1]
        if d.w1 < eps as f64 && i >= start_index {
            run += 1;
            if run >= window {
                return Some(steps[i + 1]);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Combine both signals into the early-stop verdict.
///
/// `stationary` requires the peak to fire and a quiet density window that
/// starts no earlier than the peak; a quiet stretch before the fall (for
/// instance the narrow early density of a cold start) does not count.
pub fn early_stop(curve: &MsdCurve, movie: &DensityMovie, cfg: &DetectorConfig) -> Result<StopSignal> {
    cfg.validate()?;
    if curve.steps != movie.steps {
        return Err(Error::MismatchedSteps);
    }
    let evidence = transition_distances(movie);
    let peak = detect_peak(curve, cfg.drop_fraction, cfg.persistence);

    let msd_peak_value = match peak {
        Some((idx, _)) => curve.values[idx],
        None => curve.values.iter().cloned().fold(0.0f32, f32::max),
    };

    let (status, peak_step, stop_step) = match peak {
        None => (Status::Diffusive, None, None),
        Some((peak_idx, peak_step)) => {
            let stop = stationarity_from(
                &evidence,
                &curve.steps,
                cfg.stationarity_window,
                cfg.stationarity_eps,
                peak_idx,
            );
            match stop {
                Some(step) => (Status::Stationary, Some(peak_step), Some(step)),
                None => (Status::Peaked, Some(peak_step), None),
            }
        }
    };

    Ok(StopSignal { status, peak_step, stop_step, msd_peak_value, evidence })
}

/// Ternary quantization against the detected mode structure.
#[derive(Clone, Debug, Serialize)]
pub struct TernaryQuant {
    /// (mu_minus, 0, mu_plus); a missing side is 0.
    pub levels: (f32, f32, f32),
    /// Per-weight level choice: -1, 0 or +1.
    pub assignments: Vec<i8>,
    pub rmse: f32,
}

/// Map each weight to the nearest of {mu_minus, 0, mu_plus}, where the mus
/// are the report's negative/positive mode locations. With zero-symmetric
/// modes the decision thresholds sit at mu/2.
pub fn quantize_ternary(weights: &[f32], report: &BimodalityReport) -> Result<TernaryQuant> {
    if report.mode_count > 2 {
        return Err(Error::TooManyModes(report.mode_count));
    }
    let mu_minus = report
        .mode_locations
        .iter()
        .cloned()
        .filter(|&m| m < 0.0)
        .fold(0.0f32, f32::min);
    let mu_plus = report
        .mode_locations
        .iter()
        .cloned()
        .filter(|&m| m > 0.0)
        .fold(0.0f32, f32::max);

    let levels = [mu_minus, 0.0f32, mu_plus];
    let mut assignments = Vec::with_capacity(weights.len());
    let mut err = 0.0f64;
    for &w in weights {
        let mut best = 1usize; // ties resolve toward zero
        let mut best_d = (w - levels[1]).abs();
        for (i, &l) in levels.iter().enumerate() {
            let d = (w - l).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        assignments.push(best as i8 - 1);
        let r = (w - levels[best]) as f64;
        err += r * r;
    }
    let rmse = (err / weights.len().max(1) as f64).sqrt() as f32;
    Ok(TernaryQuant { levels: (mu_minus, 0.0, mu_plus), assignments, rmse })
}
