//! Quantum-inspired prototype learning: one matrix product state per class
//! (and channel), trained to maximize fidelity with angle-encoded samples,
//! then used for nearest-prototype classification, anomaly scoring and
//! prototype-aware embeddings.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` and `*32` aliases below name the common instantiations.

pub mod data;
pub mod embed;
pub mod encoding;
pub mod error;
pub mod geometry;
pub mod mps;
pub mod scalar;
pub mod tasks;
pub mod training;

pub use data::{LabeledDataset, Split};
pub use embed::{Embedding, TsneConfig};
pub use encoding::{encode, encode_dataset, EncodedSample, EncodingConfig, FeatureScaler, ScaleMode};
pub use error::{QpplError, Result};
pub use geometry::{DistanceMatrix, Metric, RowId, RowKind, DEFAULT_CLAMP_MAX};
pub use mps::{InitMode, LogOverlap, MpsPrototype, PrototypeMeta, Sign, SiteTensor};
pub use scalar::Scalar;
pub use tasks::{
    anomaly_score, auroc, classify, classify_hierarchical, Classification, HierarchicalDecision, HierarchyLayout,
    HierarchySpec, PrototypeSet,
};
pub use training::{train_prototype, train_prototype_set, TrainConfig, TrainReport};

pub type MpsPrototype64 = MpsPrototype<f64>;
pub type MpsPrototype32 = MpsPrototype<f32>;
pub type EncodedSample64 = EncodedSample<f64>;
pub type EncodedSample32 = EncodedSample<f32>;
pub type FeatureScaler64 = FeatureScaler<f64>;
pub type FeatureScaler32 = FeatureScaler<f32>;
pub type PrototypeSet64 = PrototypeSet<f64>;
pub type PrototypeSet32 = PrototypeSet<f32>;
pub type DistanceMatrix64 = DistanceMatrix<f64>;
pub type DistanceMatrix32 = DistanceMatrix<f32>;
pub type LabeledDataset64 = LabeledDataset<f64>;
pub type LabeledDataset32 = LabeledDataset<f32>;
pub type Embedding64 = Embedding<f64>;
pub type Embedding32 = Embedding<f32>;
