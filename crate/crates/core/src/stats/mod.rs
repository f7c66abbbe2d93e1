//! Temporal diagnostics over a series slice: MSD curves, density movies and
//! bimodality measures.

mod bimodality;
mod density;
mod msd;

pub use bimodality::{bimodality, bimodality_csv, BimodalityReport, MODE_THRESHOLD};
pub use density::{density_movie, DensityMovie, Histogram, RangePolicy, RangeRecord};
pub use msd::{msd, msd_centered, MsdCurve};
