//! Dataset containers, loaders, windowing, seeded splits and synthetic data.

mod csv_io;
mod idx;
mod split;
mod synth;
mod window;

pub use csv_io::{load_csv, CsvSchema};
pub use idx::{load_idx, load_idx_bytes, write_idx_images, write_idx_labels, IdxOptions};
pub use split::{split, SplitConfig};
pub use synth::{make_blobs, BlobSpec};
pub use window::window_segments;

use std::collections::BTreeSet;

use crate::error::{QpplError, Result};

/// Environment variable naming the dataset cache directory.
pub const DATA_DIR_ENV: &str = "QPPL_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// `N` samples, each `C` channels of `M` features, stored sample-major then
/// channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    features: Vec<T>,
    channels: usize,
    width: usize,
    labels: Vec<String>,
    ids: Vec<String>,
    split: Option<Vec<Split>>,
}

impl<T: Copy> LabeledDataset<T> {
    pub fn new(features: Vec<T>, channels: usize, width: usize, labels: Vec<String>, ids: Vec<String>) -> Result<Self> {
        if channels == 0 || width == 0 {
            return Err(QpplError::InvalidDimension(format!(
                "channels ({channels}) and features per channel ({width}) must be positive"
            )));
        }
        let n = labels.len();
        if ids.len() != n {
            return Err(QpplError::LengthMismatch { expected: n, got: ids.len() });
        }
        if features.len() != n * channels * width {
            return Err(QpplError::LengthMismatch { expected: n * channels * width, got: features.len() });
        }
        Ok(Self { features, channels, width, labels, ids, split: None })
    }

    /// Builds a single-channel dataset from rows, with ids `0..N`.
    pub fn from_rows(rows: &[Vec<T>], labels: Vec<String>) -> Result<Self> {
        let width = rows.first().map(Vec::len).ok_or(QpplError::EmptyDataset)?;
        if let Some(bad) = rows.iter().find(|r| r.len() != width) {
            return Err(QpplError::LengthMismatch { expected: width, got: bad.len() });
        }
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(rows.concat(), 1, width, labels, ids)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Features per channel (`M`).
    pub fn width(&self) -> usize {
        self.width
    }

    /// Flattened row of `C * M` values.
    pub fn row(&self, i: usize) -> &[T] {
        let stride = self.channels * self.width;
        &self.features[i * stride..(i + 1) * stride]
    }

    pub fn channel(&self, i: usize, c: usize) -> &[T] {
        let start = (i * self.channels + c) * self.width;
        &self.features[start..start + self.width]
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn split_assignment(&self) -> Option<&[Split]> {
        self.split.as_deref()
    }

    pub fn with_split(mut self, split: Vec<Split>) -> Result<Self> {
        if split.len() != self.len() {
            return Err(QpplError::LengthMismatch { expected: self.len(), got: split.len() });
        }
        self.split = Some(split);
        Ok(self)
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<String> {
        self.labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.channels * self.width);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            channels: self.channels,
            width: self.width,
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            split: self.split.as_ref().map(|s| indices.iter().map(|&i| s[i]).collect()),
        }
    }

    /// The first `n` samples of every class, in their original order.
    pub fn head_per_class(&self, n: usize) -> Self {
        let mut seen: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = seen.entry(self.labels[i].as_str()).or_insert(0);
                *c += 1;
                *c <= n
            })
            .collect();
        self.subset(&keep)
    }

    /// Samples assigned to `part`. Without a split assignment every sample
    /// counts as training data.
    pub fn part(&self, part: Split) -> Self {
        let indices: Vec<usize> = match &self.split {
            Some(s) => (0..self.len()).filter(|&i| s[i] == part).collect(),
            None if part == Split::Train => (0..self.len()).collect(),
            None => Vec::new(),
        };
        self.subset(&indices)
    }

    /// Replaces every label through `map`; samples mapped to `None` are dropped.
    pub fn relabel<F: Fn(&str) -> Option<String>>(&self, map: F) -> Self {
        let mut keep = Vec::new();
        let mut labels = Vec::new();
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(new) = map(l) {
                keep.push(i);
                labels.push(new);
            }
        }
        let mut out = self.subset(&keep);
        out.labels = labels;
        out
    }
}
