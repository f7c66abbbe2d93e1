//! Checkpoint series: an ordered index over `step-XXXXXXXX.wts` files and
//! strided extraction of one tensor's history across them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::store::format::{Container, Dtype};

/// One checkpoint file in a series.
#[derive(Clone, Debug)]
pub struct SeriesEntry {
    pub step: u64,
    pub path: PathBuf,
}

/// Ordered (step -> container) index over a run directory.
///
/// `tensor_names` is the intersection of tensors present in every entry;
/// those tensors are validated to have identical shape and dtype throughout.
#[derive(Clone, Debug)]
pub struct CheckpointSeries {
    pub entries: Vec<SeriesEntry>,
    tensors: BTreeMap<String, (Dtype, Vec<usize>)>,
}

fn step_from_filename(path: &Path) -> Option<u64> {
    let name = path.file_name()?.to_str()?;
    let digits = name.strip_prefix("step-")?.strip_suffix(".wts")?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Canonical file name for a checkpoint at `step`.
pub fn checkpoint_filename(step: u64) -> String {
    format!("step-{step:08}.wts")
}

/// Index a run directory. Files not matching `step-<digits>.wts` are ignored.
pub fn open_series(dir: &Path) -> Result<CheckpointSeries> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries: Vec<SeriesEntry> = Vec::new();
    for item in rd {
        let item = item.map_err(|e| Error::io(dir, e))?;
        let path = item.path();
        if let Some(step) = step_from_filename(&path) {
            entries.push(SeriesEntry { step, path });
        }
    }
    if entries.is_empty() {
        return Err(Error::NoCheckpoints(dir.to_path_buf()));
    }
    entries.sort_by_key(|e| (e.step, e.path.clone()));
    for pair in entries.windows(2) {
        if pair[0].step == pair[1].step {
            return Err(Error::DuplicateStep(pair[0].step));
        }
    }

    // The filename convention is authoritative: a header step that disagrees
    // with the filename is an error, never silently preferred.
    let mut tensors: Option<BTreeMap<String, (Dtype, Vec<usize>)>> = None;
    for entry in &entries {
        let c = Container::open(&entry.path)?;
        if c.step() != entry.step {
            return Err(Error::StepMismatch {
                path: entry.path.clone(),
                header: c.step(),
                filename: entry.step,
            });
        }
        let present: BTreeMap<String, (Dtype, Vec<usize>)> = c
            .tensor_names()
            .map(|n| {
                let m = c.meta(n).expect("name came from this container");
                (n.to_string(), (m.dtype, m.shape.clone()))
            })
            .collect();
        tensors = Some(match tensors {
            None => present,
            Some(mut acc) => {
                acc.retain(|name, _| present.contains_key(name));
                for (name, sig) in &acc {
                    if present[name] != *sig {
                        return Err(Error::InconsistentTensor {
                            name: name.clone(),
                            step: entry.step,
                        });
                    }
                }
                acc
            }
        });
    }

    Ok(CheckpointSeries { entries, tensors: tensors.unwrap_or_default() })
}

impl CheckpointSeries {
    pub fn steps(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.step).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Names common to every checkpoint, in sorted order.
    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn tensor_signature(&self, name: &str) -> Result<(Dtype, &[usize])> {
        self.tensors
            .get(name)
            .map(|(d, s)| (*d, s.as_slice()))
            .ok_or_else(|| Error::UnknownTensor(name.into()))
    }

    pub fn open_entry(&self, index: usize) -> Result<Container> {
        Container::open(&self.entries[index].path)
    }
}

/// A (T x K) matrix: one flattened tensor's values across T checkpoints,
/// promoted to f32. Rows follow the series' strictly increasing step order.
#[derive(Clone, Debug)]
pub struct SeriesSlice {
    pub tensor: String,
    pub steps: Vec<u64>,
    pub k: usize,
    pub stride: usize,
    values: Vec<f32>,
}

impl SeriesSlice {
    pub fn from_rows(tensor: impl Into<String>, steps: Vec<u64>, stride: usize, rows: Vec<Vec<f32>>) -> Self {
        assert_eq!(steps.len(), rows.len());
        let k = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(k * rows.len());
        for r in &rows {
            assert_eq!(r.len(), k);
            values.extend_from_slice(r);
        }
        SeriesSlice { tensor: tensor.into(), steps, k, stride, values }
    }

    pub fn t(&self) -> usize {
        self.steps.len()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.values[t * self.k..(t + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.k.max(1))
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Materialize the strided history of one tensor.
///
/// Row t holds every `stride`-th element of the flattened tensor at
/// checkpoint t, in row-major order. Files are mapped one at a time and
/// unmapped as soon as their row is extracted, so peak memory is the strided
/// matrix plus a single checkpoint's mapping, not the series size.
pub fn flatten_series(series: &CheckpointSeries, tensor: &str, stride: usize) -> Result<SeriesSlice> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be >= 1".into()));
    }
    let (_, shape) = series.tensor_signature(tensor)?;
    let k = shape.iter().product::<usize>().div_ceil(stride);

    let mut values = Vec::with_capacity(k * series.len());
    for i in 0..series.len() {
        let c = series.open_entry(i)?;
        let row = c.tensor_f32_strided(tensor, stride)?;
        debug_assert_eq!(row.len(), k);
        values.extend_from_slice(&row);
    }
    Ok(SeriesSlice {
        tensor: tensor.to_string(),
        steps: series.steps(),
        k,
        stride,
        values,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::store::format::{write_checkpoint, TensorData};
    use tempfile::tempdir;

    fn write_step(dir: &Path, step: u64, vals: Vec<f32>) {
        let mut tensors = BTreeMap::new();
        tensors.insert("W".to_string(), TensorData::f32(vec![2, 2], vals));
        write_checkpoint(step, &tensors, &dir.join(checkpoint_filename(step))).unwrap();
    }

    #[test]
    fn series_sorts_and_validates() {
        let dir = tempdir().unwrap();
        for step in [3000u64, 1000, 2000] {
            write_step(dir.path(), step, vec![step as f32; 4]);
        }
        let s = open_series(dir.path()).unwrap();
        assert_eq!(s.steps(), vec![1000, 2000, 3000]);
        assert_eq!(s.tensor_names().collect::<Vec<_>>(), vec!["W"]);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempdir().unwrap();
        assert!(matches!(open_series(dir.path()), Err(Error::NoCheckpoints(_))));
    }

    #[test]
    fn duplicate_step_is_an_error() {
        let dir = tempdir().unwrap();
        write_step(dir.path(), 5, vec![1.0; 4]);
        // same step through an unpadded filename
        let mut tensors = BTreeMap::new();
        tensors.insert("W".to_string(), TensorData::f32(vec![2, 2], vec![2.0; 4]));
        write_checkpoint(5, &tensors, &dir.path().join("step-5.wts")).unwrap();
        assert!(matches!(open_series(dir.path()), Err(Error::DuplicateStep(5))));
    }

    #[test]
    fn header_step_must_match_filename() {
        let dir = tempdir().unwrap();
        let mut tensors = BTreeMap::new();
        tensors.insert("W".to_string(), TensorData::f32(vec![1], vec![1.0]));
        write_checkpoint(7, &tensors, &dir.path().join(checkpoint_filename(9))).unwrap();
        assert!(matches!(open_series(dir.path()), Err(Error::StepMismatch { .. })));
    }

    #[test]
    fn inconsistent_shapes_are_an_error() {
        let dir = tempdir().unwrap();
        write_step(dir.path(), 1, vec![0.0; 4]);
        let mut tensors = BTreeMap::new();
        tensors.insert("W".to_string(), TensorData::f32(vec![4, 1], vec![0.0; 4]));
        write_checkpoint(2, &tensors, &dir.path().join(checkpoint_filename(2))).unwrap();
        assert!(matches!(open_series(dir.path()), Err(Error::InconsistentTensor { .. })));
    }

    #[test]
    fn flatten_matches_direct_reads() {
        let dir = tempdir().unwrap();
        let rows = [
            vec![1.0f32, 2.0, 3.0, 4.0],
            vec![5.0, 6.0, 7.0, 8.0],
            vec![9.0, 10.0, 11.0, 12.0],
        ];
        for (i, r) in rows.iter().enumerate() {
            write_step(dir.path(), (i as u64 + 1) * 10, r.clone());
        }
        let series = open_series(dir.path()).unwrap();
        let slice = flatten_series(&series, "W", 1).unwrap();
        assert_eq!(slice.t(), 3);
        assert_eq!(slice.k, 4);
        for (i, r) in rows.iter().enumerate() {
            let direct = Container::open(&series.entries[i].path)
                .unwrap()
                .tensor_f32("W")
                .unwrap();
            assert_eq!(slice.row(i), &direct[..]);
            assert_eq!(slice.row(i), &r[..]);
        }
    }

    #[test]
    fn strided_k_uses_ceiling() {
        let dir = tempdir().unwrap();
        let vals: Vec<f32> = (0..10).map(|i| i as f32).collect();
        let mut tensors = BTreeMap::new();
        tensors.insert("W".to_string(), TensorData::f32(vec![10], vals));
        write_checkpoint(0, &tensors, &dir.path().join(checkpoint_filename(0))).unwrap();
        let series = open_series(dir.path()).unwrap();
        let slice = flatten_series(&series, "W", 4).unwrap();
        assert_eq!(slice.k, 3); // ceil(10 / 4)
        assert_eq!(slice.row(0), &[0.0, 4.0, 8.0]);
    }

    #[test]
    fn unknown_tensor_is_an_error() {
        let dir = tempdir().unwrap();
        write_step(dir.path(), 1, vec![0.0; 4]);
        let series = open_series(dir.path()).unwrap();
        assert!(matches!(
            flatten_series(&series, "nope", 1),
            Err(Error::UnknownTensor(_))
        ));
    }
}
