//! Fidelity and Euclidean distances, channel averaging, and distance matrix
//! assembly.
//!
//! NLF is a dissimilarity, not a metric: it can violate the triangle
//! inequality. Everything downstream only assumes symmetry, a zero diagonal
//! and nonnegativity.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::data::LabeledDataset;
use crate::encoding::EncodedSample;
use crate::error::{QpplError, Result};
use crate::mps::{LogOverlap, MpsPrototype, Sign};
use crate::scalar::Scalar;
use crate::tasks::PrototypeSet;

/// Upper clamp on NLF values (fidelity about 1e-13).
pub const DEFAULT_CLAMP_MAX: f64 = 30.0;

/// `-ln|overlap|`, clamped to `[0, clamp_max]`.
pub fn nlf<T: Scalar>(overlap: LogOverlap<T>, clamp_max: T) -> T {
    if overlap.sign == Sign::Zero || overlap.log_magnitude.is_nan() {
        return clamp_max;
    }
    (-overlap.log_magnitude).max(T::zero()).min(clamp_max)
}

pub fn sample_sample_nlf<T: Scalar>(a: &EncodedSample<T>, b: &EncodedSample<T>, clamp_max: T) -> Result<T> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(QpplError::ShapeMismatch(format!("samples of {} and {} sites", a.len(), b.len())));
    }
    let mut total = T::zero();
    for m in 0..a.len() {
        let dot: T = a.local(m).iter().zip(b.local(m)).map(|(&x, &y)| x * y).sum();
        if dot == T::zero() {
            return Ok(clamp_max);
        }
        total -= dot.abs().ln();
    }
    Ok(total.max(T::zero()).min(clamp_max))
}

/// NLF between a sample and the normalized prototype.
pub fn sample_prototype_nlf<T: Scalar>(psi: &MpsPrototype<T>, phi: &EncodedSample<T>, clamp_max: T) -> Result<T> {
    let ov = psi.sample_overlap(phi)?.scaled_down(psi.cached_log_norm());
    Ok(nlf(ov, clamp_max))
}

/// NLF between two normalized prototypes.
pub fn prototype_prototype_nlf<T: Scalar>(a: &MpsPrototype<T>, b: &MpsPrototype<T>, clamp_max: T) -> Result<T> {
    let ov = a.mps_overlap(b)?.scaled_down(a.cached_log_norm() + b.cached_log_norm());
    Ok(nlf(ov, clamp_max))
}

/// Mean of the per-channel sample/prototype NLFs.
pub fn multichannel_nlf<T: Scalar>(protos: &[&MpsPrototype<T>], phis: &[EncodedSample<T>], clamp_max: T) -> Result<T> {
    if protos.len() != phis.len() || protos.is_empty() {
        return Err(QpplError::ShapeMismatch(format!("{} prototypes for {} channels", protos.len(), phis.len())));
    }
    let mut sum = T::zero();
    for (psi, phi) in protos.iter().zip(phis) {
        sum += sample_prototype_nlf(psi, phi, clamp_max)?;
    }
    Ok(sum / T::of(phis.len() as f64))
}

fn multichannel_sample_nlf<T: Scalar>(a: &[EncodedSample<T>], b: &[EncodedSample<T>], clamp_max: T) -> Result<T> {
    if a.len() != b.len() || a.is_empty() {
        return Err(QpplError::ShapeMismatch(format!("{} vs {} channels", a.len(), b.len())));
    }
    let mut sum = T::zero();
    for (x, y) in a.iter().zip(b) {
        sum += sample_sample_nlf(x, y, clamp_max)?;
    }
    Ok(sum / T::of(a.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowKind {
    Sample,
    Prototype,
}

impl fmt::Display for RowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowKind::Sample => "sample",
            RowKind::Prototype => "prototype",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RowId {
    pub kind: RowKind,
    pub index: usize,
    pub label: String,
}

impl RowId {
    pub fn sample(index: usize, label: impl Into<String>) -> Self {
        Self { kind: RowKind::Sample, index, label: label.into() }
    }

    pub fn prototype(index: usize, label: impl Into<String>) -> Self {
        Self { kind: RowKind::Prototype, index, label: label.into() }
    }

    /// Parses `kind:label:index`; the label may itself contain colons.
    pub fn parse(s: &str) -> Option<Self> {
        let (kind, rest) = s.split_once(':')?;
        let (label, index) = rest.rsplit_once(':')?;
        let kind = match kind {
            "sample" => RowKind::Sample,
            "prototype" => RowKind::Prototype,
            _ => return None,
        };
        Some(Self { kind, index: index.parse().ok()?, label: label.to_string() })
    }
}

impl fmt::Display for RowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.kind, self.label, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Nlf,
}

/// Symmetric, zero-diagonal, nonnegative and finite dissimilarities with
/// identified rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    entries: Vec<T>,
    row_ids: Vec<RowId>,
    metric: Metric,
}

impl<T: Scalar> DistanceMatrix<T> {
    pub fn new(entries: Vec<T>, row_ids: Vec<RowId>, metric: Metric) -> Result<Self> {
        let n = row_ids.len();
        if entries.len() != n * n {
            return Err(QpplError::LengthMismatch { expected: n * n, got: entries.len() });
        }
        for i in 0..n {
            if entries[i * n + i] != T::zero() {
                return Err(QpplError::ShapeMismatch(format!("diagonal entry {i} is not zero")));
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if !v.is_finite() {
                    return Err(QpplError::NonFiniteDistance(i, j));
                }
                if v < T::zero() || v != entries[j * n + i] {
                    return Err(QpplError::ShapeMismatch(format!("entry ({i}, {j}) is negative or asymmetric")));
                }
            }
        }
        Ok(Self { entries, row_ids, metric })
    }

    /// Fills the upper triangle with `f` (in parallel over rows) and mirrors it.
    fn assemble<F>(row_ids: Vec<RowId>, metric: Metric, f: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> Result<T> + Sync,
    {
        let n = row_ids.len();
        let rows: Vec<Result<Vec<T>>> =
            (0..n).into_par_iter().map(|i| ((i + 1)..n).map(|j| f(i, j)).collect()).collect();
        let mut entries = vec![T::zero(); n * n];
        for (i, row) in rows.into_iter().enumerate() {
            for (k, v) in row?.into_iter().enumerate() {
                let j = i + 1 + k;
                if !v.is_finite() {
                    return Err(QpplError::NonFiniteDistance(i, j));
                }
                entries[i * n + j] = v;
                entries[j * n + i] = v;
            }
        }
        Ok(Self { entries, row_ids, metric })
    }

    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.len() + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let n = self.len();
        &self.entries[i * n..(i + 1) * n]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn row_ids(&self) -> &[RowId] {
        &self.row_ids
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn labels(&self) -> Vec<String> {
        self.row_ids.iter().map(|r| r.label.clone()).collect()
    }

    /// Indices of rows of the given kind.
    pub fn rows_of_kind(&self, kind: RowKind) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.row_ids[i].kind == kind).collect()
    }

    pub fn submatrix(&self, indices: &[usize]) -> Self {
        let mut entries = Vec::with_capacity(indices.len() * indices.len());
        for &i in indices {
            for &j in indices {
                entries.push(self.get(i, j));
            }
        }
        Self { entries, row_ids: indices.iter().map(|&i| self.row_ids[i].clone()).collect(), metric: self.metric }
    }

    /// Header of `kind:label:index` ids, then one line per row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.row_ids.iter().map(|r| r.to_string()))?;
        for i in 0..self.len() {
            out.write_record(self.row(i).iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read_csv<R: Read>(r: R, metric: Metric) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let row_ids = reader
            .headers()?
            .iter()
            .enumerate()
            .map(|(c, h)| {
                RowId::parse(h).ok_or_else(|| QpplError::ParseError {
                    row: 0,
                    col: c + 1,
                    msg: format!("bad row id `{h}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut entries = Vec::with_capacity(row_ids.len() * row_ids.len());
        for (row, rec) in reader.records().enumerate() {
            for (col, cell) in rec?.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| QpplError::ParseError {
                    row: row + 1,
                    col: col + 1,
                    msg: format!("`{cell}` is not a number"),
                })?;
                entries.push(T::of(v));
            }
        }
        Self::new(entries, row_ids, metric)
    }

    pub fn load_csv(path: impl AsRef<Path>, metric: Metric) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, metric)
    }
}

/// Euclidean distances between flattened feature rows.
pub fn euclidean_matrix<T: Scalar>(data: &LabeledDataset<T>) -> Result<DistanceMatrix<T>> {
    let ids = (0..data.len()).map(|i| RowId::sample(i, data.labels()[i].clone())).collect();
    DistanceMatrix::assemble(ids, Metric::Euclidean, |i, j| {
        Ok(data.row(i).iter().zip(data.row(j)).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt())
    })
}

/// Channel-averaged NLF between encoded samples (`[sample][channel]`).
pub fn nlf_sample_matrix<T: Scalar>(
    samples: &[Vec<EncodedSample<T>>],
    labels: &[String],
    clamp_max: T,
) -> Result<DistanceMatrix<T>> {
    if samples.len() != labels.len() {
        return Err(QpplError::LengthMismatch { expected: samples.len(), got: labels.len() });
    }
    let ids = labels.iter().enumerate().map(|(i, l)| RowId::sample(i, l.clone())).collect();
    DistanceMatrix::assemble(ids, Metric::Nlf, |i, j| multichannel_sample_nlf(&samples[i], &samples[j], clamp_max))
}

/// Samples followed by one row per class prototype (channel-averaged), with
/// sample/sample, sample/prototype and prototype/prototype NLFs.
pub fn augmented_matrix<T: Scalar>(
    samples: &[Vec<EncodedSample<T>>],
    labels: &[String],
    set: &PrototypeSet<T>,
    clamp_max: T,
) -> Result<DistanceMatrix<T>> {
    if samples.len() != labels.len() {
        return Err(QpplError::LengthMismatch { expected: samples.len(), got: labels.len() });
    }
    let n = samples.len();
    let classes = set.classes();
    let ids = labels
        .iter()
        .enumerate()
        .map(|(i, l)| RowId::sample(i, l.clone()))
        .chain(classes.iter().enumerate().map(|(k, l)| RowId::prototype(k, l.clone())))
        .collect();
    DistanceMatrix::assemble(ids, Metric::Nlf, |i, j| match (i < n, j < n) {
        (true, true) => multichannel_sample_nlf(&samples[i], &samples[j], clamp_max),
        (true, false) => multichannel_nlf(&set.class_prototypes(j - n), &samples[i], clamp_max),
        (false, true) => multichannel_nlf(&set.class_prototypes(i - n), &samples[j], clamp_max),
        (false, false) => {
            let (a, b) = (set.class_prototypes(i - n), set.class_prototypes(j - n));
            let mut sum = T::zero();
            for (x, y) in a.iter().zip(&b) {
                sum += prototype_prototype_nlf(x, y, clamp_max)?;
            }
            Ok(sum / T::of(a.len() as f64))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::EncodingConfig;

    const CLAMP: f64 = DEFAULT_CLAMP_MAX;

    fn enc(xs: &[f64]) -> EncodedSample<f64> {
        EncodedSample::from_scaled(xs, &EncodingConfig::default())
    }

    #[test]
    fn nlf_rules() {
        assert_eq!(nlf(LogOverlap::from_value(1.0), CLAMP), 0.0);
        assert_eq!(nlf(LogOverlap::<f64>::zero(), CLAMP), 30.0);
        assert_eq!(nlf(LogOverlap { log_magnitude: -2.5, sign: Sign::Negative }, CLAMP), 2.5);
        assert_eq!(nlf(LogOverlap { log_magnitude: 1e-15, sign: Sign::Positive }, CLAMP), 0.0);
        assert_eq!(nlf(LogOverlap { log_magnitude: -55.0, sign: Sign::Positive }, CLAMP), 30.0);
    }

    #[test]
    fn sample_pairs() {
        let a = enc(&[0.1, 0.5, 0.9]);
        assert_eq!(sample_sample_nlf(&a, &a, CLAMP).unwrap(), 0.0);
        assert_eq!(sample_sample_nlf(&enc(&[0.0, 0.5]), &enc(&[1.0, 0.5]), CLAMP).unwrap(), 30.0);
    }

    #[test]
    fn prototype_distances() {
        let phi = enc(&[0.3, 0.7, 0.2, 0.9]);
        let psi = MpsPrototype::from_product(&phi);
        assert!(sample_prototype_nlf(&psi, &phi, CLAMP).unwrap() < 1e-14);
        let g = MpsPrototype::<f64>::init_random(4, 2, 3, 5, crate::mps::InitMode::Gaussian).unwrap();
        assert!(prototype_prototype_nlf(&g, &g, CLAMP).unwrap() < 1e-8);
        let mut scaled = g.clone();
        scaled.site_mut(1).scale(9.0);
        assert!(prototype_prototype_nlf(&g, &scaled, CLAMP).unwrap() < 1e-8);
    }

    #[test]
    fn euclidean_toy() {
        let rows = vec![vec![0.0, 0.0], vec![3.0, 4.0], vec![0.0, 0.0]];
        let ds = LabeledDataset::from_rows(&rows, vec!["a".into(), "b".into(), "a".into()]).unwrap();
        let dm = euclidean_matrix(&ds).unwrap();
        assert_eq!(dm.row(0), &[0.0, 5.0, 0.0]);
        assert_eq!(dm.row(1), &[5.0, 0.0, 5.0]);
        assert_eq!(dm.get(2, 0), 0.0);
    }

    #[test]
    fn row_id_round_trip() {
        for id in [RowId::sample(3, "a:b"), RowId::prototype(0, ""), RowId::sample(12, "Ankle boot")] {
            assert_eq!(RowId::parse(&id.to_string()), Some(id));
        }
        assert_eq!(RowId::parse("nope:x:1"), None);
    }

    #[test]
    fn csv_round_trip() {
        let samples: Vec<Vec<EncodedSample<f64>>> =
            [[0.1, 0.2], [0.8, 0.3], [0.5, 0.5]].iter().map(|x| vec![enc(x)]).collect();
        let labels = vec!["x,y".to_string(), "b".into(), "x,y".into()];
        let dm = nlf_sample_matrix(&samples, &labels, CLAMP).unwrap();
        let mut buf = Vec::new();
        dm.write_csv(&mut buf).unwrap();
        let back = DistanceMatrix::<f64>::read_csv(&buf[..], Metric::Nlf).unwrap();
        assert_eq!(back, dm);
    }

    #[test]
    fn validation_rejects_asymmetry() {
        let ids = vec![RowId::sample(0, "a"), RowId::sample(1, "a")];
        assert!(DistanceMatrix::new(vec![0.0, 1.0, 2.0, 0.0], ids.clone(), Metric::Nlf).is_err());
        assert!(DistanceMatrix::new(vec![0.0, f64::INFINITY, f64::INFINITY, 0.0], ids, Metric::Nlf).is_err());
    }
}
