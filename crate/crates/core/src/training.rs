//! Gradient-descent fitting of MPS prototypes on the average negative
//! logarithmic fidelity (NLF) of their training samples.
//!
//! The loss is taken against the normalized state,
//!
//! ```text
//! L = -(1/N) sum_n max(ln|<phi_n|psi>| - ln||psi||, clamp)
//! ```
//!
//! which makes it invariant under rescaling of any tensor. Its gradient with
//! respect to site `m` is `-(1/N) sum_n E_n[m] / <phi_n|psi> + w * B[m] / <psi|psi>`,
//! with `E_n[m]` the single-site environment of sample `n`, `B[m]` the
//! single-site environment of `<psi|psi>` and `w` the fraction of samples
//! above the clamp. Clamped samples contribute nothing.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::LabeledDataset;
use crate::encoding::{encode_dataset, EncodedSample, EncodingConfig, FeatureScaler};
use crate::error::{QpplError, Result};
use crate::mps::{InitMode, MpsPrototype, PrototypeMeta, SiteTensor};
use crate::scalar::Scalar;
use crate::tasks::PrototypeSet;

/// Samples per work unit when environments are fanned out over threads.
/// Partial gradients are always summed in chunk order so results do not
/// depend on the thread count.
const CHUNK: usize = 16;

/// Consecutive loss increases tolerated before training is aborted.
const DIVERGENCE_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` is full-batch.
    pub batch_size: Option<usize>,
    pub bond_dim: usize,
    pub seed: u64,
    /// Lower clamp on per-sample normalized log-overlaps.
    pub min_log_overlap_clamp: f64,
    /// Stop once the relative loss change over an epoch falls below this.
    pub convergence_tol: f64,
    /// Renormalize the state every this many gradient steps.
    pub renormalize_every: usize,
    pub init: InitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 200,
            batch_size: None,
            bond_dim: 10,
            seed: 42,
            min_log_overlap_clamp: -30.0,
            convergence_tol: 1e-7,
            renormalize_every: 10,
            init: InitMode::NearUniform,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(QpplError::InvalidConfig(msg));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.bond_dim == 0 {
            return bad("bond dimension must be at least 1".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch size must be positive".into());
        }
        if !(self.min_log_overlap_clamp < 0.0) {
            return bad(format!("clamp {} must be negative", self.min_log_overlap_clamp));
        }
        if self.renormalize_every == 0 {
            return bad("renormalize_every must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Average NLF after each epoch.
    pub loss_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    pub final_loss: f64,
    pub epochs_run: usize,
    pub final_learning_rate: f64,
}

impl TrainReport {
    /// `epoch,loss,grad_norm` per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,loss,grad_norm")?;
        for (e, (l, g)) in self.loss_history.iter().zip(&self.grad_norm_history).enumerate() {
            writeln!(w, "{},{l:e},{g:e}", e + 1)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

fn check_samples<T: Scalar>(psi: &MpsPrototype<T>, samples: &[EncodedSample<T>]) -> Result<()> {
    if samples.is_empty() {
        return Err(QpplError::EmptySampleSet);
    }
    samples.iter().try_for_each(|phi| psi.check_sample(phi))
}

/// Normalized, clamped log-overlap of one sample.
fn clamped_log_fidelity<T: Scalar>(raw: T, log_norm: T, clamp: T) -> (T, bool) {
    let v = raw - log_norm;
    if v.is_nan() || v <= clamp {
        (clamp, true)
    } else {
        (v, false)
    }
}

/// Average NLF of `samples` against the normalized `psi`.
pub fn nlf_loss<T: Scalar>(psi: &MpsPrototype<T>, samples: &[EncodedSample<T>], clamp: T) -> Result<T> {
    check_samples(psi, samples)?;
    let log_norm = psi.cached_log_norm();
    let mut total = T::zero();
    for phi in samples {
        let ov = psi.sample_overlap(phi)?;
        total += clamped_log_fidelity(ov.log_magnitude, log_norm, clamp).0;
    }
    Ok(-total / T::of(samples.len() as f64))
}

/// Analytic gradient of [`nlf_loss`] with respect to every site tensor.
pub fn nlf_gradient<T: Scalar>(
    psi: &MpsPrototype<T>,
    samples: &[EncodedSample<T>],
    clamp: T,
) -> Result<Vec<SiteTensor<T>>> {
    Ok(loss_and_gradient(psi, samples, clamp)?.1)
}

/// Loss and gradient in one pass over the samples.
pub fn loss_and_gradient<T: Scalar>(
    psi: &MpsPrototype<T>,
    samples: &[EncodedSample<T>],
    clamp: T,
) -> Result<(T, Vec<SiteTensor<T>>)> {
    check_samples(psi, samples)?;
    let norm_env = psi.norm_environments();
    let log_norm = T::of(0.5) * norm_env.log_norm_sqr;

    let partials: Vec<Result<(T, usize, Vec<SiteTensor<T>>)>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = psi.zeros_like();
            let mut fid_sum = T::zero();
            let mut active = 0usize;
            for phi in chunk {
                let env = psi.sample_environments(phi)?;
                let (fid, clamped) = clamped_log_fidelity(env.overlap.log_magnitude, log_norm, clamp);
                fid_sum += fid;
                if clamped {
                    continue;
                }
                active += 1;
                let sign = env.overlap.signum();
                let log_f = env.overlap.log_magnitude;
                for (m, g) in grad.iter_mut().enumerate() {
                    let coef = sign * (env.left_log[m] + env.right_log[m + 1] - log_f).exp();
                    let (d, left, right) = g.shape();
                    let lv = &env.left[m];
                    let rv = &env.right[m + 1];
                    let local = phi.local(m);
                    let data = g.data_mut();
                    for s in 0..d {
                        let cs = coef * local[s];
                        if cs == T::zero() {
                            continue;
                        }
                        for l in 0..left {
                            let w = cs * lv[l];
                            let row = &mut data[(s * left + l) * right..(s * left + l + 1) * right];
                            for (x, &r) in row.iter_mut().zip(rv) {
                                *x += w * r;
                            }
                        }
                    }
                }
            }
            Ok((fid_sum, active, grad))
        })
        .collect();

    let n = T::of(samples.len() as f64);
    let mut grad = psi.zeros_like();
    let mut fid_total = T::zero();
    let mut active = 0usize;
    for part in partials {
        let (f, a, g) = part?;
        fid_total += f;
        active += a;
        for (acc, x) in grad.iter_mut().zip(&g) {
            for (p, &q) in acc.data_mut().iter_mut().zip(x.data()) {
                *p -= q;
            }
        }
    }
    let inv_n = n.recip();
    grad.iter_mut().for_each(|g| g.scale(inv_n));

    if active > 0 {
        let weight = T::of(active as f64) / n;
        for (m, g) in grad.iter_mut().enumerate() {
            let a = psi.site(m);
            let (d, left, right) = a.shape();
            let le = &norm_env.left[m];
            let re = &norm_env.right[m + 1];
            let coef = weight * (norm_env.left_log[m] + norm_env.right_log[m + 1] - norm_env.log_norm_sqr).exp();
            let mut tmp = vec![T::zero(); left * right];
            let data = g.data_mut();
            for s in 0..d {
                let slab = a.slice(s);
                // tmp[l, r'] = sum_l' LE[l, l'] A[s, l', r']
                for l in 0..left {
                    let trow = &mut tmp[l * right..(l + 1) * right];
                    trow.iter_mut().for_each(|x| *x = T::zero());
                    for lp in 0..left {
                        let w = le.get(l, lp);
                        for (x, &y) in trow.iter_mut().zip(&slab[lp * right..(lp + 1) * right]) {
                            *x += w * y;
                        }
                    }
                }
                // B[s, l, r] = sum_r' tmp[l, r'] RE[r, r']
                for l in 0..left {
                    let trow = &tmp[l * right..(l + 1) * right];
                    for r in 0..right {
                        let b: T = trow.iter().enumerate().map(|(rp, &x)| x * re.get(r, rp)).sum();
                        data[(s * left + l) * right + r] += coef * b;
                    }
                }
            }
        }
    }
    Ok((-fid_total / n, grad))
}

fn grad_norm<T: Scalar>(grad: &[SiteTensor<T>]) -> f64 {
    grad.iter().map(|g| g.norm_sqr()).sum::<T>().sqrt().as_f64()
}

/// Fits one prototype to `samples` by plain gradient descent.
///
/// Full-batch steps that would raise the loss are rejected and the learning
/// rate is halved; in mini-batch mode the rate is halved whenever the epoch
/// loss rises. Ten consecutive increases abort with
/// [`QpplError::DivergenceDetected`].
pub fn train_prototype<T: Scalar>(
    samples: &[EncodedSample<T>],
    config: &TrainConfig,
) -> Result<(MpsPrototype<T>, TrainReport)> {
    config.validate()?;
    let first = samples.first().ok_or(QpplError::EmptySampleSet)?;
    let mut psi = MpsPrototype::init_random(first.len(), first.dim(), config.bond_dim, config.seed, config.init)?;
    check_samples(&psi, samples)?;
    let clamp = T::of(config.min_log_overlap_clamp);
    let mut eta = T::of(config.learning_rate);
    let mut report = TrainReport::default();
    let mut increases = 0usize;
    let mut steps = 0usize;

    // The step is taken in the normalized parametrization: scaling every
    // tensor by f scales the gradient by 1/f, so multiplying eta by the
    // per-site scale squared keeps normalized iterates independent of when
    // renormalization happens. On a normalized state the factor is 1.
    let mut step = |psi: &mut MpsPrototype<T>, grad: &[SiteTensor<T>], eta: T| {
        let per_site = psi.cached_log_norm() / T::of(psi.len() as f64);
        psi.apply_update(grad, eta * (per_site + per_site).exp());
        steps += 1;
        if steps % config.renormalize_every == 0 {
            psi.normalize();
        }
    };

    match config.batch_size {
        Some(b) if b < samples.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
            let mut order: Vec<usize> = (0..samples.len()).collect();
            let mut loss = nlf_loss(&psi, samples, clamp)?;
            for _ in 0..config.epochs {
                order.shuffle(&mut rng);
                let mut last_norm = 0.0;
                for batch in order.chunks(b) {
                    let picked: Vec<EncodedSample<T>> = batch.iter().map(|&i| samples[i].clone()).collect();
                    let (_, grad) = loss_and_gradient(&psi, &picked, clamp)?;
                    last_norm = grad_norm(&grad);
                    step(&mut psi, &grad, eta);
                }
                let new_loss = nlf_loss(&psi, samples, clamp)?;
                report.epochs_run += 1;
                report.loss_history.push(new_loss.as_f64());
                report.grad_norm_history.push(last_norm);
                if !new_loss.is_finite() || new_loss > loss {
                    eta = eta * T::of(0.5);
                    increases += 1;
                    if increases >= DIVERGENCE_WINDOW {
                        report.final_loss = new_loss.as_f64();
                        report.final_learning_rate = eta.as_f64();
                        return Err(QpplError::DivergenceDetected(Box::new(report)));
                    }
                } else {
                    increases = 0;
                }
                let rel = ((loss - new_loss).abs() / loss.abs().max(T::min_positive_value())).as_f64();
                loss = new_loss;
                if rel < config.convergence_tol {
                    break;
                }
            }
            report.final_loss = loss.as_f64();
        }
        _ => {
            let (mut loss, mut grad) = loss_and_gradient(&psi, samples, clamp)?;
            for _ in 0..config.epochs {
                let mut candidate = psi.clone();
                step(&mut candidate, &grad, eta);
                let (new_loss, new_grad) = loss_and_gradient(&candidate, samples, clamp)?;
                report.epochs_run += 1;
                if !new_loss.is_finite() || new_loss > loss {
                    eta = eta * T::of(0.5);
                    increases += 1;
                    report.loss_history.push(loss.as_f64());
                    report.grad_norm_history.push(grad_norm(&grad));
                    if increases >= DIVERGENCE_WINDOW {
                        report.final_loss = loss.as_f64();
                        report.final_learning_rate = eta.as_f64();
                        return Err(QpplError::DivergenceDetected(Box::new(report)));
                    }
                    continue;
                }
                increases = 0;
                let rel = ((loss - new_loss) / loss.abs().max(T::min_positive_value())).as_f64();
                psi = candidate;
                loss = new_loss;
                grad = new_grad;
                report.loss_history.push(loss.as_f64());
                report.grad_norm_history.push(grad_norm(&grad));
                if rel < config.convergence_tol {
                    break;
                }
            }
            report.final_loss = loss.as_f64();
        }
    }
    report.final_learning_rate = eta.as_f64();
    psi.normalize();
    Ok((psi, report))
}

/// Deterministic per-job seed from the base seed, class label and channel.
pub fn derive_seed(base: u64, label: &str, channel: usize) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in base.to_le_bytes().iter().chain(label.as_bytes()).chain(&(channel as u64).to_le_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Trains one prototype per (class, channel) of `classes` on the training
/// part of `data`.
pub fn train_prototype_set<T: Scalar>(
    data: &LabeledDataset<T>,
    classes: &[String],
    scaler: FeatureScaler<T>,
    encoding: EncodingConfig,
    config: &TrainConfig,
) -> Result<(PrototypeSet<T>, Vec<TrainReport>)> {
    config.validate()?;
    encoding.validate()?;
    let encoded = encode_dataset(data, &scaler, &encoding)?;
    let channels = data.channels();
    let mut jobs = Vec::new();
    for label in classes {
        let members: Vec<usize> = (0..data.len()).filter(|&i| &data.labels()[i] == label).collect();
        if members.is_empty() {
            return Err(QpplError::MissingClass(label.clone()));
        }
        for c in 0..channels {
            jobs.push((label.clone(), c, members.iter().map(|&i| encoded[i][c].clone()).collect::<Vec<_>>()));
        }
    }
    let trained: Vec<Result<(MpsPrototype<T>, TrainReport)>> = jobs
        .into_par_iter()
        .map(|(label, c, samples)| {
            let job = TrainConfig { seed: derive_seed(config.seed, &label, c), ..config.clone() };
            let (psi, report) = train_prototype(&samples, &job)?;
            log::info!(
                "trained prototype {label}/{c}: loss {:.6} after {} epochs",
                report.final_loss,
                report.epochs_run
            );
            let meta = PrototypeMeta { class_label: label, channel: c as u16, theta: encoding.theta };
            Ok((psi.with_meta(meta), report))
        })
        .collect();
    let mut prototypes = Vec::with_capacity(trained.len());
    let mut reports = Vec::with_capacity(trained.len());
    for t in trained {
        let (p, r) = t?;
        prototypes.push(p);
        reports.push(r);
    }
    let set = PrototypeSet::new(classes.to_vec(), channels, prototypes, encoding, scaler)?;
    Ok((set, reports))
}
