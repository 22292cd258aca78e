//! Silhouette coefficient and Davies-Bouldin index.

use std::collections::BTreeMap;

use crate::error::{QpplError, Result};
use crate::geometry::DistanceMatrix;
use crate::scalar::Scalar;

fn groups(labels: &[String]) -> BTreeMap<&str, Vec<usize>> {
    let mut g: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        g.entry(l.as_str()).or_default().push(i);
    }
    g
}

fn silhouette_with(labels: &[String], dist: impl Fn(usize, usize) -> f64) -> Result<f64> {
    if labels.is_empty() {
        return Err(QpplError::EmptyDataset);
    }
    let g = groups(labels);
    if g.len() < 2 {
        return Err(QpplError::SingleCluster);
    }
    let mut total = 0.0;
    for (i, label) in labels.iter().enumerate() {
        let own = &g[label.as_str()];
        if own.len() == 1 {
            continue;
        }
        let a = own.iter().filter(|&&j| j != i).map(|&j| dist(i, j)).sum::<f64>() / (own.len() - 1) as f64;
        let b = g
            .iter()
            .filter(|(l, _)| **l != label.as_str())
            .map(|(_, members)| members.iter().map(|&j| dist(i, j)).sum::<f64>() / members.len() as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / labels.len() as f64)
}

/// Mean silhouette over all rows of a dissimilarity matrix. Singleton
/// clusters contribute 0.
pub fn silhouette<T: Scalar>(dm: &DistanceMatrix<T>, labels: &[String]) -> Result<f64> {
    if labels.len() != dm.len() {
        return Err(QpplError::LengthMismatch { expected: dm.len(), got: labels.len() });
    }
    silhouette_with(labels, |i, j| dm.get(i, j).as_f64())
}

fn euclid<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y).as_f64().powi(2)).sum::<f64>().sqrt()
}

fn check_points<T>(points: &[T], dim: usize, labels: &[String]) -> Result<()> {
    if dim == 0 || points.len() != labels.len() * dim {
        return Err(QpplError::LengthMismatch { expected: labels.len() * dim, got: points.len() });
    }
    Ok(())
}

/// Mean silhouette of row-major points under the Euclidean distance.
pub fn silhouette_points<T: Scalar>(points: &[T], dim: usize, labels: &[String]) -> Result<f64> {
    check_points(points, dim, labels)?;
    let p = |i: usize| &points[i * dim..(i + 1) * dim];
    silhouette_with(labels, |i, j| euclid(p(i), p(j)))
}

/// Davies-Bouldin index of row-major points (lower is better).
pub fn davies_bouldin<T: Scalar>(points: &[T], dim: usize, labels: &[String]) -> Result<f64> {
    check_points(points, dim, labels)?;
    if labels.is_empty() {
        return Err(QpplError::EmptyDataset);
    }
    let g = groups(labels);
    if g.len() < 2 {
        return Err(QpplError::SingleCluster);
    }
    let p = |i: usize| &points[i * dim..(i + 1) * dim];
    let clusters: Vec<(&str, Vec<f64>, f64)> = g
        .iter()
        .map(|(&label, members)| {
            let mut c = vec![0.0; dim];
            for &i in members {
                for (ck, &x) in c.iter_mut().zip(p(i)) {
                    *ck += x.as_f64();
                }
            }
            c.iter_mut().for_each(|v| *v /= members.len() as f64);
            let spread = members
                .iter()
                .map(|&i| p(i).iter().zip(&c).map(|(&x, &m)| (x.as_f64() - m).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / members.len() as f64;
            (label, c, spread)
        })
        .collect();
    let mut total = 0.0;
    for (a, (la, ca, sa)) in clusters.iter().enumerate() {
        let mut worst = f64::NEG_INFINITY;
        for (b, (lb, cb, sb)) in clusters.iter().enumerate() {
            if a == b {
                continue;
            }
            let sep = euclid(ca, cb);
            if sep == 0.0 {
                return Err(QpplError::CoincidentCentroids(la.to_string(), lb.to_string()));
            }
            worst = worst.max((sa + sb) / sep);
        }
        total += worst;
    }
    Ok(total / clusters.len() as f64)
}
