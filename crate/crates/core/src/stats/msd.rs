//! Mean square displacement over a (T x K) slice.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;
use crate::store::SeriesSlice;

/// MSD(tau) per checkpoint, tau expressed in training steps.
#[derive(Clone, Debug, Serialize)]
pub struct MsdCurve {
    pub steps: Vec<u64>,
    pub values: Vec<f32>,
}

impl MsdCurve {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `msd.csv` emission: header `step,msd`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,msd\n");
        for (s, v) in self.steps.iter().zip(&self.values) {
            out.push_str(&format!("{s},{v}\n"));
        }
        out
    }
}

fn msd_of_rows<'a>(
    steps: &[u64],
    k: usize,
    rows: impl Iterator<Item = &'a [f32]>,
    center: Option<&[f64]>,
) -> Result<MsdCurve> {
    if k < 2 {
        return Err(Error::TooFewParameters(k));
    }
    let mut cum = vec![0.0f64; k];
    let mut demeaned = vec![0.0f64; k];
    let mut squares = vec![0.0f64; k];
    let mut values = Vec::with_capacity(steps.len());
    for row in rows {
        for (d, &x) in demeaned.iter_mut().zip(row) {
            *d = x as f64;
        }
        if let Some(c) = center {
            for (d, &m) in demeaned.iter_mut().zip(c) {
                *d -= m;
            }
        }
        let row_mean = pairwise_sum(&demeaned) / k as f64;
        for (c, d) in cum.iter_mut().zip(&demeaned) {
            *c += *d - row_mean;
        }
        for (s, c) in squares.iter_mut().zip(&cum) {
            *s = *c * *c;
        }
        values.push((pairwise_sum(&squares) / (k - 1) as f64) as f32);
    }
    Ok(MsdCurve { steps: steps.to_vec(), values })
}

/// MSD as printed: cumulative sums of per-step-demeaned values,
///
///   w_hat[tau][j] = sum_{t <= tau} (w[t][j] - mean_j(w[t][.]))
///   MSD(tau)      = (1 / (K - 1)) * sum_j w_hat[tau][j]^2
///
/// accumulated in f64 with a fixed pairwise reduction order.
pub fn msd(slice: &SeriesSlice) -> Result<MsdCurve> {
    msd_of_rows(&slice.steps, slice.k, slice.rows(), None)
}

/// MSD of the series-centered slice: each parameter's full-series mean is
/// subtracted before the cumulative sum.
///
/// The plain curve cannot fall once parameters freeze at distinct values
/// (each frozen parameter keeps adding its own offset, so the variance of
/// the cumulative sums grows without bound); centering makes the cumulative
/// sum of a frozen parameter return to zero, so converged dynamics produce
/// a peak followed by a decay. This is the displacement signal the
/// bifurcation detector consumes.
pub fn msd_centered(slice: &SeriesSlice) -> Result<MsdCurve> {
    let k = slice.k;
    if k < 2 {
        return Err(Error::TooFewParameters(k));
    }
    let t = slice.t().max(1) as f64;
    let mut mean = vec![0.0f64; k];
    for row in slice.rows() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x as f64;
        }
    }
    for m in &mut mean {
        *m /= t;
    }
    msd_of_rows(&slice.steps, k, slice.rows(), Some(&mean))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice_of(rows: Vec<Vec<f32>>) -> SeriesSlice {
        let steps = (1..=rows.len() as u64).collect();
        SeriesSlice::from_rows("W", steps, 1, rows)
    }

    /// Naive double-loop reference, straight off the definition.
    pub(crate) fn msd_naive(rows: &[Vec<f32>]) -> Vec<f64> {
        let t = rows.len();
        let k = rows[0].len();
        let mut out = Vec::with_capacity(t);
        for tau in 0..t {
            let mut sum_sq = 0.0f64;
            for j in 0..k {
                let mut w_hat = 0.0f64;
                for row in rows.iter().take(tau + 1) {
                    let mean = row.iter().map(|&x| x as f64).sum::<f64>() / k as f64;
                    w_hat += row[j] as f64 - mean;
                }
                sum_sq += w_hat * w_hat;
            }
            out.push(sum_sq / (k - 1) as f64);
        }
        out
    }

    #[test]
    fn constant_rows_have_zero_msd() {
        let rows = vec![vec![3.0; 5], vec![-1.0; 5], vec![0.5; 5]];
        let curve = msd(&slice_of(rows)).unwrap();
        assert!(curve.values.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn matches_naive_reference() {
        let rng = crate::rng::StreamRng::new(3).stream(0, 0);
        let rows: Vec<Vec<f32>> = (0..3)
            .map(|t| (0..4).map(|j| rng.gauss_at(t * 4 + j) as f32).collect())
            .collect();
        let got = msd(&slice_of(rows.clone())).unwrap();
        let want = msd_naive(&rows);
        for (g, w) in got.values.iter().zip(&want) {
            assert!(((*g as f64 - w) / w.max(1e-12)).abs() < 1e-6, "{g} vs {w}");
        }
    }

    #[test]
    fn white_noise_grows_linearly() {
        // i.i.d. zero-mean unit-variance rows: the cumulative sum is a random
        // walk over tau, so MSD(tau) ~ tau.
        let k = 10_000;
        let rng = crate::rng::StreamRng::new(11).stream(1, 0);
        let rows: Vec<Vec<f32>> = (0..200u64)
            .map(|t| (0..k).map(|j| rng.gauss_at(t * k as u64 + j as u64) as f32).collect())
            .collect();
        let curve = msd(&slice_of(rows)).unwrap();
        for (i, &v) in curve.values.iter().enumerate() {
            let tau = (i + 1) as f32;
            assert!((v - tau).abs() / tau < 0.05, "tau={tau} msd={v}");
        }
    }

    #[test]
    fn row_shift_invariance() {
        let rng = crate::rng::StreamRng::new(5).stream(0, 0);
        let rows: Vec<Vec<f32>> = (0..4)
            .map(|t| (0..6).map(|j| rng.gauss_at(t * 6 + j) as f32).collect())
            .collect();
        let mut shifted = rows.clone();
        for x in &mut shifted[2] {
            *x += 42.0;
        }
        let a = msd(&slice_of(rows)).unwrap();
        let b = msd(&slice_of(shifted)).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() <= 1e-4 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn centered_curve_of_frozen_tail_returns_to_zero() {
        // diffuse then freeze: the centered displacement ends at exactly zero
        let rng = crate::rng::StreamRng::new(8).stream(2, 0);
        let k = 50;
        let mut rows: Vec<Vec<f32>> = (0..20)
            .map(|t| (0..k).map(|j| (rng.gauss_at((t * k + j) as u64) * 0.1) as f32).collect())
            .collect();
        let frozen: Vec<f32> = (0..k).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        for _ in 0..20 {
            rows.push(frozen.clone());
        }
        let plain = msd(&slice_of(rows.clone())).unwrap();
        let centered = msd_centered(&slice_of(rows)).unwrap();
        // plain grows through the frozen phase; centered collapses
        assert!(plain.values.last().unwrap() > &plain.values[19]);
        let peak = centered.values.iter().cloned().fold(0.0f32, f32::max);
        assert!(*centered.values.last().unwrap() < 0.05 * peak);
    }

    #[test]
    fn k_below_two_is_an_error() {
        let rows = vec![vec![1.0f32]];
        assert!(matches!(msd(&slice_of(rows)), Err(Error::TooFewParameters(1))));
    }
}
