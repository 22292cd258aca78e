use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::LabeledDataset;
use crate::error::{QpplError, Result};
use crate::scalar::Scalar;

/// Gaussian clusters inside the unit cube.
///
/// Class `k` is centred at `0.5 + separation / 2 * sign_k`, where `sign_k` is
/// a seeded random ±1 pattern; values are clipped to `[0, 1]`. Labels are
/// `c0`, `c1`, ...
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub n_per_class: usize,
    pub classes: usize,
    pub features: usize,
    pub separation: f64,
    pub std: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn new(n_per_class: usize, classes: usize, features: usize, separation: f64, seed: u64) -> Self {
        Self { n_per_class, classes, features, separation, std: 0.1, seed }
    }
}

pub fn make_blobs<T: Scalar>(spec: &BlobSpec) -> Result<LabeledDataset<T>> {
    if spec.classes == 0 || spec.features == 0 || spec.n_per_class == 0 {
        return Err(QpplError::InvalidDimension("blob counts must be positive".into()));
    }
    let noise =
        Normal::new(0.0, spec.std).map_err(|e| QpplError::InvalidConfig(format!("blob std {}: {e}", spec.std)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centres: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            (0..spec.features)
                .map(|_| 0.5 + 0.5 * spec.separation * if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    let n = spec.n_per_class * spec.classes;
    let mut features = Vec::with_capacity(n * spec.features);
    let mut labels = Vec::with_capacity(n);
    for (k, centre) in centres.iter().enumerate() {
        for _ in 0..spec.n_per_class {
            features.extend(centre.iter().map(|&c| T::of((c + noise.sample(&mut rng)).clamp(0.0, 1.0))));
            labels.push(format!("c{k}"));
        }
    }
    let ids = (0..n).map(|i| i.to_string()).collect();
    LabeledDataset::new(features, 1, spec.features, labels, ids)
}
