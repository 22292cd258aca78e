//! Brute-force references shared by the integration tests.
#![allow(dead_code)]

use qppl::{EncodedSample, MpsPrototype, PrototypeMeta, SiteTensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Contracts an MPS into its dense `d^M` amplitude vector, site 0 being the
/// most significant index.
pub fn dense_mps(psi: &MpsPrototype<f64>) -> Vec<f64> {
    let m = psi.len();
    let d = psi.phys_dim();
    let total = d.pow(m as u32);
    let mut out = Vec::with_capacity(total);
    for idx in 0..total {
        let mut digits = vec![0usize; m];
        let mut rest = idx;
        for k in (0..m).rev() {
            digits[k] = rest % d;
            rest /= d;
        }
        let mut v = vec![1.0];
        for (k, &s) in digits.iter().enumerate() {
            let (_, left, right) = psi.site(k).shape();
            let mut next = vec![0.0; right];
            for l in 0..left {
                for (r, n) in next.iter_mut().enumerate() {
                    *n += v[l] * psi.site(k).get(s, l, r);
                }
            }
            v = next;
        }
        out.push(v[0]);
    }
    out
}

/// Dense Kronecker product of a sample's local vectors.
pub fn dense_product(phi: &EncodedSample<f64>) -> Vec<f64> {
    let mut out = vec![1.0];
    for m in 0..phi.len() {
        let local = phi.local(m);
        out = out.iter().flat_map(|&a| local.iter().map(move |&b| a * b)).collect();
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense reference for the clamped, normalized average NLF loss.
pub fn dense_loss(psi: &MpsPrototype<f64>, samples: &[EncodedSample<f64>], clamp: f64) -> f64 {
    let v = dense_mps(psi);
    let ln_norm = 0.5 * dot(&v, &v).ln();
    let total: f64 = samples.iter().map(|phi| (dot(&v, &dense_product(phi)).abs().ln() - ln_norm).max(clamp)).sum();
    -total / samples.len() as f64
}

/// Random MPS with bonds drawn up to `chi`, Gaussian entries and a random
/// overall scale so that it is not normalized.
pub fn random_mps(rng: &mut ChaCha8Rng, m: usize, chi: usize) -> MpsPrototype<f64> {
    let bonds: Vec<usize> = (0..=m).map(|k| if k == 0 || k == m { 1 } else { rng.gen_range(1..=chi) }).collect();
    let sites = (0..m)
        .map(|k| {
            let scale = rng.gen_range(0.3..2.0);
            let data = (0..2 * bonds[k] * bonds[k + 1]).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
            SiteTensor::from_vec(data, 2, bonds[k], bonds[k + 1]).unwrap()
        })
        .collect();
    MpsPrototype::from_sites(sites, chi, PrototypeMeta::default()).unwrap()
}

/// Random angle-encoded sample with local vectors `[cos, sin]` of angles in
/// `[0, pi/2]`.
pub fn random_sample(rng: &mut ChaCha8Rng, m: usize) -> EncodedSample<f64> {
    let locals = (0..m)
        .flat_map(|_| {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::FRAC_PI_2);
            [a.cos(), a.sin()]
        })
        .collect();
    EncodedSample::from_locals(locals, 2).unwrap()
}

/// `|a - b| <= tol * max(1, |b|)`, the relative check used for log values
/// that can sit near zero.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}
