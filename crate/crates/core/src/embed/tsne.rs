//! Exact O(n^2) t-SNE over a precomputed dissimilarity matrix.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::Embedding;
use crate::error::{QpplError, Result};
use crate::geometry::{DistanceMatrix, Metric};
use crate::scalar::Scalar;

const SEARCH_STEPS: usize = 50;
const ENTROPY_TOL: f64 = 1e-5;

/// How dissimilarities enter the Gaussian kernel `exp(-beta * D)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AffinityInput {
    /// Square Euclidean distances; use NLF as is (it already grows
    /// quadratically with small angle differences).
    #[default]
    Auto,
    AsIs,
    Squared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub output_dim: usize,
    /// Capped at `(n - 1) / 3`.
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
    /// Record the KL divergence every this many iterations.
    pub kl_every: usize,
    pub affinity_input: AffinityInput,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            output_dim: 2,
            perplexity: 30.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            seed: 42,
            kl_every: 50,
            affinity_input: AffinityInput::Auto,
        }
    }
}

fn kernel_input<T: Scalar>(dm: &DistanceMatrix<T>, mode: AffinityInput) -> Vec<T> {
    let square = match mode {
        AffinityInput::Auto => dm.metric() == Metric::Euclidean,
        AffinityInput::AsIs => false,
        AffinityInput::Squared => true,
    };
    if square {
        dm.entries().iter().map(|&d| d * d).collect()
    } else {
        dm.entries().to_vec()
    }
}

/// Row-stochastic conditional affinities `p(j|i)` (row-major, zero diagonal)
/// with per-row bandwidths matched to `perplexity`, and the achieved
/// perplexity of every row.
pub fn conditional_affinities<T: Scalar>(dist: &[T], n: usize, perplexity: f64) -> (Vec<T>, Vec<f64>) {
    let target = perplexity.ln();
    let rows: Vec<(Vec<T>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = &dist[i * n..(i + 1) * n];
            let dmin = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(T::infinity(), T::min);
            let shifted: Vec<f64> = (0..n).map(|j| if j == i { 0.0 } else { (row[j] - dmin).as_f64() }).collect();
            let mean = shifted.iter().sum::<f64>() / (n - 1) as f64;
            let mut beta = if mean > 0.0 { 1.0 / mean } else { 1.0 };
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            let mut p = vec![0.0f64; n];
            let mut entropy = 0.0;
            for _ in 0..SEARCH_STEPS {
                let mut sum = 0.0;
                let mut weighted = 0.0;
                for j in 0..n {
                    p[j] = if j == i { 0.0 } else { (-shifted[j] * beta).exp() };
                    sum += p[j];
                    weighted += shifted[j] * p[j];
                }
                entropy = sum.ln() + beta * weighted / sum;
                let diff = entropy - target;
                if diff.abs() < ENTROPY_TOL {
                    break;
                }
                if diff > 0.0 {
                    lo = beta;
                    beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = 0.5 * (beta + lo);
                }
            }
            // final normalized row at the last beta tried
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                p[j] = if j == i { 0.0 } else { (-shifted[j] * beta).exp() };
                sum += p[j];
                weighted += shifted[j] * p[j];
            }
            entropy = if sum > 0.0 { sum.ln() + beta * weighted / sum } else { entropy };
            (p.iter().map(|&v| T::of(v / sum)).collect(), entropy.exp())
        })
        .collect();
    let mut out = Vec::with_capacity(n * n);
    let mut perps = Vec::with_capacity(n);
    for (row, perp) in rows {
        out.extend(row);
        perps.push(perp);
    }
    (out, perps)
}

/// Symmetrized joint affinities `(p(j|i) + p(i|j)) / 2n`, summing to 1.
pub fn joint_affinities<T: Scalar>(conditional: &[T], n: usize) -> Vec<T> {
    let scale = T::of(0.5 / n as f64);
    let mut p = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) * scale;
        }
    }
    p
}

fn student_kernel<T: Scalar>(y: &[T], n: usize, dim: usize) -> (Vec<T>, T) {
    let mut num = vec![T::zero(); n * n];
    let mut total = T::zero();
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: T = (0..dim).map(|k| (y[i * dim + k] - y[j * dim + k]).powi(2)).sum();
            let v = (T::one() + d2).recip();
            num[i * n + j] = v;
            num[j * n + i] = v;
            total += v + v;
        }
    }
    (num, total)
}

/// `KL(P || Q)` for joint affinities `p` and layout `y`.
pub fn kl_divergence<T: Scalar>(p: &[T], y: &[T], n: usize, dim: usize) -> f64 {
    let (num, total) = student_kernel(y, n, dim);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p[i * n + j].as_f64();
            if i != j && pij > 0.0 {
                let qij = (num[i * n + j] / total).as_f64().max(f64::MIN_POSITIVE);
                kl += pij * (pij / qij).ln();
            }
        }
    }
    kl
}

/// Gradient of `KL(exaggeration * P || Q)` with respect to `y`.
pub fn kl_gradient<T: Scalar>(p: &[T], y: &[T], n: usize, dim: usize, exaggeration: T) -> Vec<T> {
    let (num, total) = student_kernel(y, n, dim);
    let four = T::of(4.0);
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = vec![T::zero(); dim];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let w = num[i * n + j];
                let coef = (exaggeration * p[i * n + j] - w / total) * w;
                for k in 0..dim {
                    g[k] += coef * (y[i * dim + k] - y[j * dim + k]);
                }
            }
            g.iter_mut().for_each(|v| *v *= four);
            g
        })
        .collect();
    rows.concat()
}

fn effective_perplexity(config: &TsneConfig, n: usize) -> f64 {
    config.perplexity.min((n - 1) as f64 / 3.0)
}

/// The configured rate, capped at `n / early_exaggeration`. Exaggerated
/// attraction between near neighbours makes larger steps overshoot on small
/// inputs; the cap only binds below a few thousand points at the defaults.
pub fn effective_learning_rate(config: &TsneConfig, n: usize) -> f64 {
    config.learning_rate.min(n as f64 / config.early_exaggeration.max(1.0))
}

pub fn tsne<T: Scalar>(dm: &DistanceMatrix<T>, config: &TsneConfig) -> Result<Embedding<T>> {
    let dist = Normal::new(0.0, 1e-4).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = (0..dm.len() * config.output_dim).map(|_| T::of(dist.sample(&mut rng))).collect();
    tsne_with_init(dm, config, init)
}

/// Runs t-SNE from an explicit initial layout (`n * output_dim` values).
pub fn tsne_with_init<T: Scalar>(dm: &DistanceMatrix<T>, config: &TsneConfig, init: Vec<T>) -> Result<Embedding<T>> {
    let n = dm.len();
    if n < 4 {
        return Err(QpplError::TooFewPoints(n));
    }
    if config.iterations == 0 || config.output_dim == 0 || !(config.perplexity > 0.0) {
        return Err(QpplError::InvalidConfig("t-SNE needs iterations, output_dim and perplexity > 0".into()));
    }
    if init.len() != n * config.output_dim {
        return Err(QpplError::LengthMismatch { expected: n * config.output_dim, got: init.len() });
    }
    for i in 0..n {
        for j in 0..n {
            if !dm.get(i, j).is_finite() {
                return Err(QpplError::NonFiniteDistance(i, j));
            }
        }
    }
    let dim = config.output_dim;
    // Rows are processed in an order fixed by their starting coordinates (ties
    // broken by their sorted distances), so floating-point sums, and with them
    // the whole trajectory, do not depend on how the input rows are ordered.
    let sorted_rows: Vec<Vec<T>> = (0..n)
        .map(|i| {
            let mut r = dm.row(i).to_vec();
            r.sort_by(|a, b| a.as_f64().total_cmp(&b.as_f64()));
            r
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let lex = |x: &[T], y: &[T]| {
            x.iter()
                .zip(y)
                .map(|(u, v)| u.as_f64().total_cmp(&v.as_f64()))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        };
        lex(&init[a * dim..(a + 1) * dim], &init[b * dim..(b + 1) * dim])
            .then_with(|| lex(&sorted_rows[a], &sorted_rows[b]))
    });
    let kernel = kernel_input(dm, config.affinity_input);
    let canonical: Vec<T> = (0..n * n).map(|k| kernel[order[k / n] * n + order[k % n]]).collect();
    let start: Vec<T> = order.iter().flat_map(|&i| init[i * dim..(i + 1) * dim].iter().copied()).collect();

    let (y, kl_history) = optimize(&canonical, n, config, start);
    let mut points = vec![T::zero(); n * dim];
    for (pos, &i) in order.iter().enumerate() {
        points[i * dim..(i + 1) * dim].copy_from_slice(&y[pos * dim..(pos + 1) * dim]);
    }
    Ok(Embedding { points, dim, row_ids: dm.row_ids().to_vec(), kl_history })
}

fn optimize<T: Scalar>(kernel: &[T], n: usize, config: &TsneConfig, mut y: Vec<T>) -> (Vec<T>, Vec<(usize, f64)>) {
    let dim = config.output_dim;
    let (cond, _) = conditional_affinities(kernel, n, effective_perplexity(config, n));
    let p = joint_affinities(&cond, n);
    let mut update = vec![T::zero(); n * dim];
    let mut gains = vec![T::one(); n * dim];
    let lr = T::of(effective_learning_rate(config, n));
    let min_gain = T::of(0.01);
    let mut kl_history = Vec::new();
    for it in 0..config.iterations {
        let exaggeration = if it < config.exaggeration_iters { T::of(config.early_exaggeration) } else { T::one() };
        let momentum = T::of(if it < config.momentum_switch_iter { config.momentum } else { config.final_momentum });
        let grad = kl_gradient(&p, &y, n, dim, exaggeration);
        for idx in 0..n * dim {
            let same_direction = (grad[idx] > T::zero()) == (update[idx] > T::zero());
            gains[idx] = if same_direction { gains[idx] * T::of(0.8) } else { gains[idx] + T::of(0.2) };
            gains[idx] = gains[idx].max(min_gain);
            update[idx] = momentum * update[idx] - lr * gains[idx] * grad[idx];
            y[idx] += update[idx];
        }
        for k in 0..dim {
            let mean = (0..n).map(|i| y[i * dim + k]).sum::<T>() / T::of(n as f64);
            (0..n).for_each(|i| y[i * dim + k] -= mean);
        }
        if (it + 1) % config.kl_every.max(1) == 0 || it + 1 == config.iterations {
            kl_history.push((it + 1, kl_divergence(&p, &y, n, dim)));
        }
    }
    (y, kl_history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RowId;

    fn line_matrix(xs: &[f64]) -> DistanceMatrix<f64> {
        let n = xs.len();
        let entries = (0..n * n).map(|k| (xs[k / n] - xs[k % n]).abs()).collect();
        DistanceMatrix::new(entries, (0..n).map(|i| RowId::sample(i, "a")).collect(), Metric::Euclidean).unwrap()
    }

    #[test]
    fn rows_are_stochastic_and_match_perplexity() {
        let xs: Vec<f64> = (0..40).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let dm = line_matrix(&xs);
        let sq = kernel_input(&dm, AffinityInput::Auto);
        let (p, perps) = conditional_affinities(&sq, 40, 10.0);
        for i in 0..40 {
            let s: f64 = p[i * 40..(i + 1) * 40].iter().sum();
            assert!((s - 1.0).abs() < 1e-8);
            assert!((perps[i] - 10.0).abs() < 1e-3, "row {i}: {}", perps[i]);
        }
        let joint = joint_affinities(&p, 40);
        assert!((joint.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn too_few_points() {
        let dm = line_matrix(&[0.0, 1.0, 2.0]);
        assert!(matches!(tsne(&dm, &TsneConfig::default()), Err(QpplError::TooFewPoints(3))));
    }
}
