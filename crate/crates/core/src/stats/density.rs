//! Shared-grid histogram movies over a slice.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{quantile, sorted_copy};
use crate::store::SeriesSlice;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum RangePolicy {
    /// Edges span the global min and max of the slice.
    GlobalMinMax,
    /// Edges span the (p, 1-p) quantiles of the whole slice; mass outside is
    /// clipped into the end bins.
    Quantile(f64),
}

impl RangePolicy {
    /// Early diffusive checkpoints carry outliers that flatten a min-max
    /// movie, so a mild quantile trim is the default.
    pub const DEFAULT_QUANTILE: f64 = 0.001;
}

impl Default for RangePolicy {
    fn default() -> Self {
        RangePolicy::Quantile(Self::DEFAULT_QUANTILE)
    }
}

/// How the shared edges were chosen, plus what got clipped.
#[derive(Clone, Debug, Serialize)]
pub struct RangeRecord {
    pub policy: RangePolicy,
    pub lo: f32,
    pub hi: f32,
    pub clipped_low: u64,
    pub clipped_high: u64,
    /// Set when the slice was a single value and the movie fell back to one bin.
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Histogram {
    /// B+1 strictly increasing, uniform bin edges.
    pub edges: Vec<f32>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_center(&self, i: usize) -> f32 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    /// Normalized CDF at each bin's right edge.
    pub fn cdf(&self) -> Vec<f64> {
        let total = self.total.max(1) as f64;
        let mut acc = 0.0;
        self.counts
            .iter()
            .map(|&c| {
                acc += c as f64 / total;
                acc
            })
            .collect()
    }
}

/// Per-checkpoint histograms over one shared edge vector.
#[derive(Clone, Debug, Serialize)]
pub struct DensityMovie {
    pub steps: Vec<u64>,
    pub histograms: Vec<Histogram>,
    pub range: RangeRecord,
}

impl DensityMovie {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last(&self) -> &Histogram {
        self.histograms.last().expect("movie has at least one frame")
    }

    /// `density.csv` emission: header `step,bin_index,bin_left,bin_right,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,bin_index,bin_left,bin_right,count\n");
        for (s, h) in self.steps.iter().zip(&self.histograms) {
            for (i, &c) in h.counts.iter().enumerate() {
                out.push_str(&format!("{s},{i},{},{},{c}\n", h.edges[i], h.edges[i + 1]));
            }
        }
        out
    }
}

/// Histogram every row of the slice onto one shared grid.
pub fn density_movie(slice: &SeriesSlice, bins: usize, policy: RangePolicy) -> Result<DensityMovie> {
    if bins < 2 {
        return Err(Error::InvalidConfig("bins must be >= 2".into()));
    }
    if slice.t() == 0 || slice.k == 0 {
        return Err(Error::InvalidConfig("empty slice".into()));
    }

    let (lo, hi) = match policy {
        RangePolicy::GlobalMinMax => {
            let mut lo = f32::INFINITY;
            let mut hi = f32::NEG_INFINITY;
            for &v in slice.values() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (lo, hi)
        }
        RangePolicy::Quantile(p) => {
            if !(0.0..0.5).contains(&p) {
                return Err(Error::InvalidConfig(format!("quantile p must be in [0, 0.5), got {p}")));
            }
            let sorted = sorted_copy(slice.values());
            (quantile(&sorted, p), quantile(&sorted, 1.0 - p))
        }
    };

    let degenerate = hi <= lo;
    let (lo, hi, bins) = if degenerate {
        // single-valued slice: one bin centered on the value
        (lo - 0.5, lo + 0.5, 1)
    } else {
        (lo, hi, bins)
    };

    let edges: Vec<f32> = (0..=bins)
        .map(|i| (lo as f64 + (hi as f64 - lo as f64) * i as f64 / bins as f64) as f32)
        .collect();

    let width = (hi as f64 - lo as f64) / bins as f64;
    let mut clipped_low = 0u64;
    let mut clipped_high = 0u64;
    let mut histograms = Vec::with_capacity(slice.t());
    for row in slice.rows() {
        let mut counts = vec![0u64; bins];
        for &v in row {
            let idx = if v < lo {
                clipped_low += 1;
                0
            } else if v > hi {
                clipped_high += 1;
                bins - 1
            } else {
                (((v as f64 - lo as f64) / width) as usize).min(bins - 1)
            };
            counts[idx] += 1;
        }
        histograms.push(Histogram { edges: edges.clone(), counts, total: row.len() as u64 });
    }

    Ok(DensityMovie {
        steps: slice.steps.clone(),
        histograms,
        range: RangeRecord { policy, lo, hi, clipped_low, clipped_high, degenerate },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice_of(rows: Vec<Vec<f32>>) -> SeriesSlice {
        let steps = (1..=rows.len() as u64).collect();
        SeriesSlice::from_rows("W", steps, 1, rows)
    }

    #[test]
    fn all_zero_slice_masses_one_bin() {
        let movie = density_movie(&slice_of(vec![vec![0.0; 10]; 3]), 8, RangePolicy::GlobalMinMax).unwrap();
        assert!(movie.range.degenerate);
        for h in &movie.histograms {
            assert_eq!(h.counts, vec![10]);
            assert_eq!(h.total, 10);
        }
    }

    #[test]
    fn symmetric_two_value_split() {
        let mut row = vec![-1.0f32; 50];
        row.extend(vec![1.0f32; 50]);
        let movie = density_movie(&slice_of(vec![row]), 2, RangePolicy::GlobalMinMax).unwrap();
        assert_eq!(movie.histograms[0].counts, vec![50, 50]);
    }

    #[test]
    fn totals_equal_k_and_edges_are_shared() {
        let rng = crate::rng::StreamRng::new(1).stream(0, 0);
        let rows: Vec<Vec<f32>> = (0..5)
            .map(|t| (0..200).map(|j| rng.gauss_at(t * 200 + j) as f32).collect())
            .collect();
        let movie = density_movie(&slice_of(rows), 16, RangePolicy::default()).unwrap();
        for h in &movie.histograms {
            assert_eq!(h.counts.iter().sum::<u64>(), 200);
            assert_eq!(h.edges, movie.histograms[0].edges);
        }
    }

    #[test]
    fn quantile_policy_clips_outliers() {
        let mut row = vec![0.0f32; 998];
        row.push(1000.0);
        row.push(-1000.0);
        let movie = density_movie(&slice_of(vec![row]), 4, RangePolicy::Quantile(0.001)).unwrap();
        assert!(movie.range.hi < 1000.0);
        assert!(movie.range.clipped_high >= 1);
        assert!(movie.range.clipped_low >= 1);
        assert_eq!(movie.histograms[0].total, 1000);
        assert_eq!(movie.histograms[0].counts.iter().sum::<u64>(), 1000);
    }

    #[test]
    fn bins_below_two_rejected() {
        let err = density_movie(&slice_of(vec![vec![0.0; 4]]), 1, RangePolicy::GlobalMinMax);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }
}
