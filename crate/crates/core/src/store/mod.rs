//! On-disk checkpoint containers (WTS1) and series access.

mod format;
mod series;

pub use format::{
    write_checkpoint, Container, Dtype, TensorData, TensorMeta, TensorValues, DATA_ALIGN, MAGIC,
};
pub use series::{checkpoint_filename, flatten_series, open_series, CheckpointSeries, SeriesEntry, SeriesSlice};
