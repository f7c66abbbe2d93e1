//! Ground-truth stochastic processes with analytically known behavior.
//!
//! Euler-Maruyama over K independent particles. Every Gaussian increment is
//! addressed as stream(seed, particle, step), so the integration can be
//! fanned out over particles in any order and still produce bitwise
//! identical slices.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tags, StreamRng};
use crate::store::{self, CheckpointSeries, SeriesSlice, TensorData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdeKind {
    /// Rows are independent draws sigma * xi; the MSD formula integrates
    /// them into a random walk of slope sigma^2 per step.
    WhiteNoise,
    /// Rows are random-walk positions.
    Brownian,
    /// Mean-reverting positions dw = -theta * w dt + sigma dW.
    Ou,
    /// dw = (a(t) w - w^3) dt + sigma dW with a ramping linearly from
    /// a_start to a_end; a > 0 splits the ensemble into modes at +-sqrt(a).
    Pitchfork,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SdeConfig {
    pub kind: SdeKind,
    /// Particle count (columns of the slice).
    pub k: usize,
    /// Step count (rows of the slice).
    pub t: usize,
    pub dt: f64,
    pub sigma: f64,
    #[serde(default)]
    pub ou_theta: f64,
    /// (a_start, a_end) for the pitchfork drift ramp.
    #[serde(default)]
    pub ramp: (f64, f64),
    pub seed: u64,
}

impl SdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig("need K >= 2 particles".into()));
        }
        if self.t < 1 {
            return Err(Error::InvalidConfig("need T >= 1 steps".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("dt must be > 0".into()));
        }
        if self.sigma < 0.0 {
            return Err(Error::InvalidConfig("sigma must be >= 0".into()));
        }
        if self.ou_theta < 0.0 {
            return Err(Error::InvalidConfig("ou_theta must be >= 0".into()));
        }
        Ok(())
    }

    /// Drift coefficient at integration step t (1-based).
    fn ramp_at(&self, t: usize) -> f64 {
        let (a0, a1) = self.ramp;
        a0 + (a1 - a0) * t as f64 / self.t as f64
    }
}

/// What the configuration implies analytically, for use as test oracles.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GroundTruth {
    /// First step at which the pitchfork drift is non-negative.
    pub bifurcation_step: Option<u64>,
    /// +-sqrt(a_end) when the ramp ends supercritical.
    pub terminal_modes: Option<(f64, f64)>,
    /// Slope of MSD(tau) per step for white noise: sigma^2.
    pub msd_slope_theory: Option<f64>,
}

fn ground_truth(cfg: &SdeConfig) -> GroundTruth {
    match cfg.kind {
        SdeKind::WhiteNoise => GroundTruth {
            bifurcation_step: None,
            terminal_modes: None,
            msd_slope_theory: Some(cfg.sigma * cfg.sigma),
        },
        SdeKind::Brownian | SdeKind::Ou => GroundTruth {
            bifurcation_step: None,
            terminal_modes: None,
            msd_slope_theory: None,
        },
        SdeKind::Pitchfork => {
            let (a0, a1) = cfg.ramp;
            let bifurcation_step = if a0 < 0.0 && a1 >= 0.0 {
                // smallest integer t with a(t) >= 0
                Some((cfg.t as f64 * -a0 / (a1 - a0)).ceil() as u64)
            } else if a0 >= 0.0 {
                Some(0)
            } else {
                None
            };
            let terminal_modes = (a1 > 0.0).then(|| (-a1.sqrt(), a1.sqrt()));
            GroundTruth { bifurcation_step, terminal_modes, msd_slope_theory: None }
        }
    }
}

/// Pitchfork symmetry breaking: particles start at N(0, 0.01) instead of 0.
const PITCHFORK_INIT_SD: f64 = 0.1;

/// Integrate one particle's trajectory as a dense column of T values.
fn integrate_particle(cfg: &SdeConfig, rng: &StreamRng, particle: usize, col: &mut [f32]) {
    let noise = rng.stream(tags::SDE, particle as u64);
    let sqrt_dt = cfg.dt.sqrt();
    let mut w = match cfg.kind {
        SdeKind::Pitchfork => {
            PITCHFORK_INIT_SD * rng.stream(tags::SDE_INIT, particle as u64).gauss_at(0)
        }
        _ => 0.0,
    };
    for t in 1..=cfg.t {
        let xi = if cfg.sigma > 0.0 { noise.gauss_at(t as u64) } else { 0.0 };
        let value = match cfg.kind {
            SdeKind::WhiteNoise => cfg.sigma * xi,
            SdeKind::Brownian => {
                w += cfg.sigma * sqrt_dt * xi;
                w
            }
            SdeKind::Ou => {
                w += -cfg.ou_theta * w * cfg.dt + cfg.sigma * sqrt_dt * xi;
                w
            }
            SdeKind::Pitchfork => {
                let a = cfg.ramp_at(t);
                w += (a * w - w * w * w) * cfg.dt + cfg.sigma * sqrt_dt * xi;
                w
            }
        };
        col[t - 1] = value as f32;
    }
}

/// Run the process and return (slice, ground truth). Rows are steps 1..=T.
pub fn simulate(cfg: &SdeConfig) -> Result<(SeriesSlice, GroundTruth)> {
    cfg.validate()?;
    let rng = StreamRng::new(cfg.seed);
    let k = cfg.k;

    // Particles integrate independently into dense columns; the addressed
    // noise streams make the result identical at any worker count.
    let chunk = 512usize;
    let column_blocks: Vec<(usize, Vec<f32>)> = (0..k)
        .step_by(chunk)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + chunk).min(k);
            let mut block = vec![0.0f32; (end - start) * cfg.t];
            for (i, p) in (start..end).enumerate() {
                integrate_particle(cfg, &rng, p, &mut block[i * cfg.t..(i + 1) * cfg.t]);
            }
            (start, block)
        })
        .collect();

    let mut values = vec![0.0f32; cfg.t * k];
    for (start, block) in column_blocks {
        let cols = block.len() / cfg.t;
        for i in 0..cols {
            let p = start + i;
            for t in 0..cfg.t {
                values[t * k + p] = block[i * cfg.t + t];
            }
        }
    }

    let steps: Vec<u64> = (1..=cfg.t as u64).collect();
    let rows: Vec<Vec<f32>> = (0..cfg.t).map(|t| values[t * k..(t + 1) * k].to_vec()).collect();
    Ok((
        SeriesSlice::from_rows("W_SIM", steps, 1, rows),
        ground_truth(cfg),
    ))
}

/// Write a slice as a WTS1 series: one checkpoint per row, tensor `W_SIM`,
/// steps t * step_spacing.
pub fn export_series(slice: &SeriesSlice, step_spacing: u64, out_dir: &Path) -> Result<CheckpointSeries> {
    if step_spacing == 0 {
        return Err(Error::InvalidConfig("step_spacing must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (i, row) in slice.rows().enumerate() {
        let step = (i as u64 + 1) * step_spacing;
        let mut tensors = BTreeMap::new();
        tensors.insert("W_SIM".to_string(), TensorData::f32(vec![slice.k], row.to_vec()));
        store::write_checkpoint(step, &tensors, &out_dir.join(store::checkpoint_filename(step)))?;
    }
    store::open_series(out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::msd;

    fn cfg(kind: SdeKind) -> SdeConfig {
        SdeConfig {
            kind,
            k: 10_000,
            t: 200,
            dt: 0.01,
            sigma: 1.0,
            ou_theta: 1.0,
            ramp: (0.0, 0.0),
            seed: 42,
        }
    }

    #[test]
    fn white_noise_msd_slope_matches_theory() {
        let (slice, gt) = simulate(&cfg(SdeKind::WhiteNoise)).unwrap();
        let curve = msd(&slice).unwrap();
        let slope = gt.msd_slope_theory.unwrap();
        for (i, &v) in curve.values.iter().enumerate() {
            let want = slope * (i + 1) as f64;
            assert!(((v as f64 - want) / want).abs() < 0.05, "tau={} v={v}", i + 1);
        }
    }

    #[test]
    fn brownian_increment_variance() {
        let (slice, _) = simulate(&cfg(SdeKind::Brownian)).unwrap();
        let k = slice.k;
        let mut acc = 0.0f64;
        let mut n = 0usize;
        for t in 1..slice.t() {
            let prev = slice.row(t - 1);
            let cur = slice.row(t);
            for j in 0..k {
                let d = (cur[j] - prev[j]) as f64;
                acc += d * d;
                n += 1;
            }
        }
        let want = 1.0 * 0.01; // sigma^2 dt
        let got = acc / n as f64;
        assert!(((got - want) / want).abs() < 0.05, "{got} vs {want}");
    }

    #[test]
    fn ou_terminal_variance_matches_theory() {
        let mut c = cfg(SdeKind::Ou);
        c.t = 1500;
        let (slice, _) = simulate(&c).unwrap();
        let last = slice.row(slice.t() - 1);
        let mean = last.iter().map(|&x| x as f64).sum::<f64>() / last.len() as f64;
        let var = last.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>()
            / (last.len() - 1) as f64;
        let want = c.sigma * c.sigma / (2.0 * c.ou_theta);
        assert!(((var - want) / want).abs() < 0.05, "{var} vs {want}");
    }

    #[test]
    fn noiseless_pitchfork_lands_on_fixed_points() {
        let c = SdeConfig {
            kind: SdeKind::Pitchfork,
            k: 100,
            t: 2000,
            dt: 0.05,
            sigma: 0.0,
            ou_theta: 0.0,
            ramp: (1.0, 1.0),
            seed: 5,
        };
        let (slice, gt) = simulate(&c).unwrap();
        assert_eq!(gt.terminal_modes, Some((-1.0, 1.0)));
        let first = slice.row(0);
        let last = slice.row(slice.t() - 1);
        for j in 0..c.k {
            let target = if first[j] > 0.0 { 1.0 } else { -1.0 };
            assert!((last[j] - target).abs() < 1e-5, "w0={} w={}", first[j], last[j]);
        }
    }

    #[test]
    fn pitchfork_ground_truth_midpoint() {
        let c = SdeConfig {
            kind: SdeKind::Pitchfork,
            k: 2,
            t: 500,
            dt: 0.1,
            sigma: 0.05,
            ou_theta: 0.0,
            ramp: (-1.0, 1.0),
            seed: 0,
        };
        assert_eq!(ground_truth(&c).bifurcation_step, Some(250));
    }

    #[test]
    fn simulation_is_deterministic() {
        let c = cfg(SdeKind::Brownian);
        let (a, _) = simulate(&c).unwrap();
        let (b, _) = simulate(&c).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn export_round_trips_bit_exactly() {
        let c = SdeConfig {
            kind: SdeKind::WhiteNoise,
            k: 4,
            t: 3,
            dt: 1.0,
            sigma: 1.0,
            ou_theta: 0.0,
            ramp: (0.0, 0.0),
            seed: 9,
        };
        let (slice, _) = simulate(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let series = export_series(&slice, 1000, dir.path()).unwrap();
        assert_eq!(series.steps(), vec![1000, 2000, 3000]);
        let back = crate::store::flatten_series(&series, "W_SIM", 1).unwrap();
        assert_eq!(back.values(), slice.values());
    }

    #[test]
    fn single_step_series_has_length_one_msd() {
        let c = SdeConfig {
            kind: SdeKind::WhiteNoise,
            k: 8,
            t: 1,
            dt: 1.0,
            sigma: 1.0,
            ou_theta: 0.0,
            ramp: (0.0, 0.0),
            seed: 1,
        };
        let (slice, _) = simulate(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let series = export_series(&slice, 1, dir.path()).unwrap();
        let back = crate::store::flatten_series(&series, "W_SIM", 1).unwrap();
        assert_eq!(msd(&back).unwrap().len(), 1);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = cfg(SdeKind::Ou);
        c.k = 1;
        assert!(simulate(&c).is_err());
        let mut c = cfg(SdeKind::Ou);
        c.dt = 0.0;
        assert!(simulate(&c).is_err());
    }
}
