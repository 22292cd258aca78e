use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LabeledDataset, Split};
use crate::error::{QpplError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.8, seed: 42, stratified: true }
    }
}

/// Seeded train/test assignment. When stratified, each class contributes
/// `round(fraction * class_size)` training samples.
pub fn split<T: Copy>(data: LabeledDataset<T>, config: &SplitConfig) -> Result<LabeledDataset<T>> {
    if !(config.train_fraction > 0.0 && config.train_fraction <= 1.0) {
        return Err(QpplError::InvalidConfig(format!("train fraction {} not in (0, 1]", config.train_fraction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    if config.stratified {
        for (i, l) in data.labels().iter().enumerate() {
            groups.entry(l.as_str()).or_default().push(i);
        }
    } else {
        groups.insert("", (0..data.len()).collect());
    }
    let mut assignment = vec![Split::Test; data.len()];
    for indices in groups.values_mut() {
        indices.shuffle(&mut rng);
        let n_train = (config.train_fraction * indices.len() as f64).round() as usize;
        for &i in &indices[..n_train.min(indices.len())] {
            assignment[i] = Split::Train;
        }
    }
    if !assignment.contains(&Split::Test) {
        log::warn!("split with train fraction {} leaves the test set empty", config.train_fraction);
    }
    data.with_split(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn imbalanced() -> LabeledDataset<f64> {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let labels = (0..100).map(|i| if i < 90 { "major" } else { "minor" }.to_string()).collect();
        LabeledDataset::from_rows(&rows, labels).unwrap()
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = split(imbalanced(), &SplitConfig::default()).unwrap();
        let b = split(imbalanced(), &SplitConfig::default()).unwrap();
        assert_eq!(a.split_assignment(), b.split_assignment());
        let c = split(imbalanced(), &SplitConfig { seed: 43, ..Default::default() }).unwrap();
        assert_ne!(a.split_assignment(), c.split_assignment());
    }

    #[test]
    fn stratified_keeps_minority_in_test() {
        let ds = split(imbalanced(), &SplitConfig::default()).unwrap();
        let test = ds.part(Split::Test);
        let minor = test.labels().iter().filter(|l| *l == "minor").count();
        let major = test.labels().iter().filter(|l| *l == "major").count();
        assert_eq!((major, minor), (18, 2));
    }

    #[test]
    fn full_fraction_gives_empty_test() {
        let ds = split(imbalanced(), &SplitConfig { train_fraction: 1.0, ..Default::default() }).unwrap();
        assert!(ds.part(Split::Test).is_empty());
        assert_eq!(ds.part(Split::Train).len(), 100);
    }

    #[test]
    fn rejects_bad_fraction() {
        assert!(split(imbalanced(), &SplitConfig { train_fraction: 0.0, ..Default::default() }).is_err());
    }
}
