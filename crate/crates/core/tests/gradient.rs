mod common;

use common::{random_mps, random_sample};
use qppl::training::{loss_and_gradient, nlf_gradient, nlf_loss};
use qppl::{EncodedSample, MpsPrototype};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

/// Relative error with a floor so entries that are zero up to rounding are
/// compared on the scale of the largest gradient entry.
fn rel_err(analytic: f64, numeric: f64, scale: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6 * scale)
}

fn shifted_loss(
    psi: &MpsPrototype<f64>,
    samples: &[EncodedSample<f64>],
    clamp: f64,
    m: usize,
    k: usize,
    dx: f64,
) -> f64 {
    let mut moved = psi.clone();
    moved.site_mut(m).data_mut()[k] += dx;
    nlf_loss(&moved, samples, clamp).unwrap()
}

fn central_difference(psi: &MpsPrototype<f64>, samples: &[EncodedSample<f64>], clamp: f64, m: usize, k: usize) -> f64 {
    let f = |dx| shifted_loss(psi, samples, clamp, m, k, dx);
    (f(H) - f(-H)) / (2.0 * H)
}

/// Fourth-order stencil, for draws where the loss curves too sharply for
/// the plain central difference.
fn five_point_difference(
    psi: &MpsPrototype<f64>,
    samples: &[EncodedSample<f64>],
    clamp: f64,
    m: usize,
    k: usize,
) -> f64 {
    let f = |dx| shifted_loss(psi, samples, clamp, m, k, dx);
    (-f(2.0 * H) + 8.0 * f(H) - 8.0 * f(-H) + f(-2.0 * H)) / (12.0 * H)
}

/// Per-sample normalized log overlaps.
fn log_fidelities(psi: &MpsPrototype<f64>, samples: &[EncodedSample<f64>]) -> Vec<f64> {
    let ln = psi.compute_log_norm();
    samples.iter().map(|phi| psi.sample_overlap(phi).unwrap().log_magnitude - ln).collect()
}

/// Largest gradient entry for which the h = 1e-5 central difference is
/// trusted. Bigger gradients come from overlaps near a sign change, where
/// ln|x| curves so sharply that the O(h^2) truncation error exceeds 1e-5.
const CENTRAL_SCALE_LIMIT: f64 = 100.0;

#[test]
fn hundred_random_trials_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut central_trials, mut stencil_trials, mut clamped_trials) = (0, 0, 0);
    let mut draw = 0;
    while central_trials < 100 {
        draw += 1;
        let m = rng.gen_range(2..=8);
        let chi = rng.gen_range(1..=4);
        let psi = random_mps(&mut rng, m, chi);
        let samples: Vec<_> = (0..rng.gen_range(2..=6)).map(|_| random_sample(&mut rng, m)).collect();
        // every third draw puts the clamp between sample fidelities so that
        // some samples are clamped and some are not
        let mut clamp = -30.0;
        if draw % 3 == 0 {
            let mut f = log_fidelities(&psi, &samples);
            f.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (gap, mid) = f.windows(2).map(|w| (w[1] - w[0], 0.5 * (w[0] + w[1]))).fold((0.0, -30.0), |a, b| {
                if b.0 > a.0 {
                    b
                } else {
                    a
                }
            });
            if gap >= 1e-2 {
                clamp = mid;
            }
        }
        let grad = nlf_gradient(&psi, &samples, clamp).unwrap();
        let scale = grad.iter().flat_map(|g| g.data().iter()).fold(0.0f64, |a, x| a.max(x.abs()));
        let central = scale <= CENTRAL_SCALE_LIMIT;
        for (site, g) in grad.iter().enumerate() {
            for k in 0..g.data().len() {
                let fd = if central {
                    central_difference(&psi, &samples, clamp, site, k)
                } else {
                    five_point_difference(&psi, &samples, clamp, site, k)
                };
                let e = rel_err(g.data()[k], fd, scale);
                assert!(e < 1e-5, "draw {draw}, site {site}, entry {k}: analytic {} fd {fd} (rel {e:e})", g.data()[k]);
            }
        }
        if central {
            central_trials += 1;
            if clamp > -30.0 {
                clamped_trials += 1;
            }
        } else {
            stencil_trials += 1;
        }
    }
    eprintln!(
        "{central_trials} central trials ({clamped_trials} with clamped samples), {stencil_trials} five-point trials"
    );
    assert!(clamped_trials >= 10, "only {clamped_trials} trials exercised the clamp");
}

#[test]
fn twenty_entries_m6_chi3_n5() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let psi = random_mps(&mut rng, 6, 3);
    let samples: Vec<_> = (0..5).map(|_| random_sample(&mut rng, 6)).collect();
    let grad = nlf_gradient(&psi, &samples, -30.0).unwrap();
    let scale = grad.iter().flat_map(|g| g.data().iter()).fold(0.0f64, |a, x| a.max(x.abs()));
    for _ in 0..20 {
        let site = rng.gen_range(0..6);
        let k = rng.gen_range(0..grad[site].data().len());
        let fd = central_difference(&psi, &samples, -30.0, site, k);
        assert!(rel_err(grad[site].data()[k], fd, scale) < 1e-5);
    }
}

#[test]
fn clamped_samples_contribute_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let psi = random_mps(&mut rng, 5, 2);
    let samples: Vec<_> = (0..4).map(|_| random_sample(&mut rng, 5)).collect();
    let f = log_fidelities(&psi, &samples);
    let worst = f.iter().cloned().fold(f64::INFINITY, f64::min);
    let clamp = worst + 1e-3;
    let kept: Vec<_> = samples.iter().zip(&f).filter(|(_, &v)| v > clamp).map(|(s, _)| s.clone()).collect();
    // the full set's gradient is the kept set's gradient reweighted by N_kept / N
    let full = nlf_gradient(&psi, &samples, clamp).unwrap();
    let sub = nlf_gradient(&psi, &kept, clamp).unwrap();
    let w = kept.len() as f64 / samples.len() as f64;
    for (a, b) in full.iter().zip(&sub) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - w * y).abs() < 1e-12 * y.abs().max(1.0));
        }
    }
}

#[test]
fn step_at_the_minimum_changes_loss_quadratically() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let phi = random_sample(&mut rng, 5);
    let psi = MpsPrototype::from_product(&phi).normalized();
    let (loss, grad) = loss_and_gradient(&psi, std::slice::from_ref(&phi), -30.0).unwrap();
    assert!(loss.abs() < 1e-12);
    let gn: f64 = grad.iter().map(|g| g.norm_sqr()).sum::<f64>().sqrt();
    assert!(gn < 1e-10, "gradient norm {gn}");
    for eta in [1e-2, 1e-3] {
        let mut moved = psi.clone();
        let dir = random_mps(&mut rng, 5, 1);
        for m in 0..5 {
            for (a, b) in moved.site_mut(m).data_mut().iter_mut().zip(dir.site(m).data()) {
                *a -= eta * b;
            }
        }
        let dl = nlf_loss(&moved, std::slice::from_ref(&phi), -30.0).unwrap();
        assert!(dl < 10.0 * eta * eta * 25.0, "eta {eta}: dL {dl}");
    }
}

#[test]
fn gradient_scales_inversely_with_the_tensors() {
    // gradient of the scale-invariant loss picks up exactly 1/c when one
    // site is multiplied by c, so c * grad is unchanged
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let psi = random_mps(&mut rng, 5, 3);
    let samples: Vec<_> = (0..3).map(|_| random_sample(&mut rng, 5)).collect();
    let g0 = nlf_gradient(&psi, &samples, -30.0).unwrap();
    let c = 3.5;
    let mut scaled = psi.clone();
    for m in 0..5 {
        scaled.site_mut(m).scale(c);
    }
    let g1 = nlf_gradient(&scaled, &samples, -30.0).unwrap();
    for (a, b) in g0.iter().zip(&g1) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - c * y).abs() < 1e-10 * x.abs().max(1.0));
        }
    }
}
