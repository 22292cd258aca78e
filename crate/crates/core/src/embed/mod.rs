//! Low-dimensional embeddings of dissimilarity matrices and the clustering
//! scores used to grade them.

mod export;
mod metrics;
mod tsne;

pub use export::{write_embedding_csv, write_embedding_svg};
pub use metrics::{davies_bouldin, silhouette, silhouette_points};
pub use tsne::{
    conditional_affinities, effective_learning_rate, joint_affinities, kl_divergence, kl_gradient, tsne,
    tsne_with_init, AffinityInput, TsneConfig,
};

use crate::geometry::{RowId, RowKind};

/// `n` points of dimension `dim`, row-major, with the identities of the rows
/// they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    pub points: Vec<T>,
    pub dim: usize,
    pub row_ids: Vec<RowId>,
    /// `(iteration, KL divergence)` at each recorded iteration.
    pub kl_history: Vec<(usize, f64)>,
}

impl<T: Copy> Embedding<T> {
    /// Wraps precomputed coordinates (such as prototype-distance vectors).
    pub fn from_coordinates(vectors: &[Vec<T>], row_ids: Vec<RowId>) -> Self {
        let dim = vectors.first().map_or(0, Vec::len);
        Self { points: vectors.concat(), dim, row_ids, kl_history: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> Vec<String> {
        self.row_ids.iter().map(|r| r.label.clone()).collect()
    }

    /// Keeps only rows of `kind`, e.g. to score samples without the
    /// prototype rows embedded alongside them.
    pub fn only(&self, kind: RowKind) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.row_ids[i].kind == kind).collect();
        Self {
            points: keep.iter().flat_map(|&i| self.point(i).iter().copied()).collect(),
            dim: self.dim,
            row_ids: keep.iter().map(|&i| self.row_ids[i].clone()).collect(),
            kl_history: self.kl_history.clone(),
        }
    }
}
