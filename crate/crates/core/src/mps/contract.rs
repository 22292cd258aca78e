use super::{MpsPrototype, SiteTensor};
use crate::encoding::EncodedSample;
use crate::error::{QpplError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Positive,
    Negative,
    Zero,
}

/// A real number carried as `sign * exp(log_magnitude)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogOverlap<T> {
    pub log_magnitude: T,
    pub sign: Sign,
}

impl<T: Scalar> LogOverlap<T> {
    pub fn zero() -> Self {
        Self { log_magnitude: T::neg_infinity(), sign: Sign::Zero }
    }

    pub fn from_value(v: T) -> Self {
        if v == T::zero() {
            Self::zero()
        } else {
            Self { log_magnitude: v.abs().ln(), sign: if v > T::zero() { Sign::Positive } else { Sign::Negative } }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sign == Sign::Zero
    }

    /// The plain value; underflows to 0 for very small magnitudes.
    pub fn value(&self) -> T {
        match self.sign {
            Sign::Zero => T::zero(),
            Sign::Positive => self.log_magnitude.exp(),
            Sign::Negative => -self.log_magnitude.exp(),
        }
    }

    /// Divides by `exp(log_scale)`.
    pub fn scaled_down(self, log_scale: T) -> Self {
        match self.sign {
            Sign::Zero => self,
            _ => Self { log_magnitude: self.log_magnitude - log_scale, sign: self.sign },
        }
    }

    pub(crate) fn signum(&self) -> T {
        match self.sign {
            Sign::Zero => T::zero(),
            Sign::Positive => T::one(),
            Sign::Negative => -T::one(),
        }
    }
}

/// Rescales `v` to unit max-norm and returns `ln` of the factor removed, or
/// `None` when `v` vanishes.
fn rescale<T: Scalar>(v: &mut [T]) -> Option<T> {
    let mx = v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()));
    if mx == T::zero() || !mx.is_finite() {
        return None;
    }
    let inv = mx.recip();
    v.iter_mut().for_each(|x| *x *= inv);
    Some(mx.ln())
}

/// `out[r] = sum_l v[l] * sum_s phi[s] * A[s, l, r]`.
fn push_vector_left<T: Scalar>(v: &[T], t: &SiteTensor<T>, phi: &[T], out: &mut Vec<T>) {
    let (d, left, right) = t.shape();
    out.clear();
    out.resize(right, T::zero());
    for s in 0..d {
        let c = phi[s];
        if c == T::zero() {
            continue;
        }
        let slab = t.slice(s);
        for l in 0..left {
            let w = v[l] * c;
            if w == T::zero() {
                continue;
            }
            let row = &slab[l * right..(l + 1) * right];
            for (o, &a) in out.iter_mut().zip(row) {
                *o += w * a;
            }
        }
    }
}

/// `out[l] = sum_r (sum_s phi[s] * A[s, l, r]) * v[r]`.
fn push_vector_right<T: Scalar>(v: &[T], t: &SiteTensor<T>, phi: &[T], out: &mut Vec<T>) {
    let (d, left, right) = t.shape();
    out.clear();
    out.resize(left, T::zero());
    for s in 0..d {
        let c = phi[s];
        if c == T::zero() {
            continue;
        }
        let slab = t.slice(s);
        for (l, o) in out.iter_mut().enumerate() {
            let row = &slab[l * right..(l + 1) * right];
            let dot: T = row.iter().zip(v).map(|(&a, &b)| a * b).sum();
            *o += c * dot;
        }
    }
}

/// Square-or-rectangular matrix over a pair of bonds, row-major.
#[derive(Debug, Clone)]
pub(crate) struct BondMatrix<T> {
    pub data: Vec<T>,
    #[allow(dead_code)]
    pub rows: usize,
    pub cols: usize,
}

impl<T: Scalar> BondMatrix<T> {
    fn identity_1x1() -> Self {
        Self { data: vec![T::one()], rows: 1, cols: 1 }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }
}

/// `E'[r, r'] = sum_{s, l, l'} E[l, l'] A[s, l, r] B[s, l', r']`.
fn transfer_left<T: Scalar>(e: &BondMatrix<T>, a: &SiteTensor<T>, b: &SiteTensor<T>) -> BondMatrix<T> {
    let (d, la, ra) = a.shape();
    let (_, lb, rb) = b.shape();
    let mut out = vec![T::zero(); ra * rb];
    let mut tmp = vec![T::zero(); lb * ra];
    for s in 0..d {
        let sa = a.slice(s);
        let sb = b.slice(s);
        // tmp[l', r] = sum_l E[l, l'] A[s, l, r]
        tmp.iter_mut().for_each(|x| *x = T::zero());
        for l in 0..la {
            for lp in 0..lb {
                let w = e.data[l * lb + lp];
                if w == T::zero() {
                    continue;
                }
                let arow = &sa[l * ra..(l + 1) * ra];
                let trow = &mut tmp[lp * ra..(lp + 1) * ra];
                for (t, &x) in trow.iter_mut().zip(arow) {
                    *t += w * x;
                }
            }
        }
        // out[r, r'] += sum_l' tmp[l', r] B[s, l', r']
        for lp in 0..lb {
            let brow = &sb[lp * rb..(lp + 1) * rb];
            for r in 0..ra {
                let w = tmp[lp * ra + r];
                if w == T::zero() {
                    continue;
                }
                let orow = &mut out[r * rb..(r + 1) * rb];
                for (o, &x) in orow.iter_mut().zip(brow) {
                    *o += w * x;
                }
            }
        }
    }
    BondMatrix { data: out, rows: ra, cols: rb }
}

/// `F'[l, l'] = sum_{s, r, r'} A[s, l, r] B[s, l', r'] F[r, r']`.
fn transfer_right<T: Scalar>(f: &BondMatrix<T>, a: &SiteTensor<T>, b: &SiteTensor<T>) -> BondMatrix<T> {
    let (d, la, ra) = a.shape();
    let (_, lb, rb) = b.shape();
    let mut out = vec![T::zero(); la * lb];
    let mut tmp = vec![T::zero(); ra * lb];
    for s in 0..d {
        let sa = a.slice(s);
        let sb = b.slice(s);
        // tmp[r, l'] = sum_r' F[r, r'] B[s, l', r']
        for r in 0..ra {
            let frow = &f.data[r * rb..(r + 1) * rb];
            for lp in 0..lb {
                let brow = &sb[lp * rb..(lp + 1) * rb];
                tmp[r * lb + lp] = frow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            }
        }
        // out[l, l'] += sum_r A[s, l, r] tmp[r, l']
        for l in 0..la {
            let orow = &mut out[l * lb..(l + 1) * lb];
            for r in 0..ra {
                let w = sa[l * ra + r];
                if w == T::zero() {
                    continue;
                }
                let trow = &tmp[r * lb..(r + 1) * lb];
                for (o, &x) in orow.iter_mut().zip(trow) {
                    *o += w * x;
                }
            }
        }
    }
    BondMatrix { data: out, rows: la, cols: lb }
}

/// Cached left and right partial contractions of `<phi|psi>`, each stored
/// at unit max-norm together with the log of its true scale.
pub(crate) struct SampleEnvironments<T> {
    /// `left[m]` contracts sites `0..m`; `left[0] = [1]`.
    pub left: Vec<Vec<T>>,
    pub left_log: Vec<T>,
    /// `right[m]` contracts sites `m..M`; `right[M] = [1]`.
    pub right: Vec<Vec<T>>,
    pub right_log: Vec<T>,
    pub overlap: LogOverlap<T>,
}

/// Cached left and right transfer matrices of `<psi|psi>`.
pub(crate) struct NormEnvironments<T> {
    pub left: Vec<BondMatrix<T>>,
    pub left_log: Vec<T>,
    pub right: Vec<BondMatrix<T>>,
    pub right_log: Vec<T>,
    /// `ln <psi|psi>`.
    pub log_norm_sqr: T,
}

impl<T: Scalar> MpsPrototype<T> {
    /// `<phi|psi>` in the log domain, by a left-to-right sweep.
    pub fn sample_overlap(&self, phi: &EncodedSample<T>) -> Result<LogOverlap<T>> {
        self.check_sample(phi)?;
        let mut v = vec![T::one()];
        let mut next = Vec::with_capacity(self.bond_dim());
        let mut log_acc = T::zero();
        for (m, t) in self.sites().iter().enumerate() {
            push_vector_left(&v, t, phi.local(m), &mut next);
            match rescale(&mut next) {
                Some(ln) => log_acc += ln,
                None => return Ok(LogOverlap::zero()),
            }
            std::mem::swap(&mut v, &mut next);
        }
        Ok(LogOverlap::from_value(v[0]).scaled_down(-log_acc))
    }

    /// `<psi|other>` in the log domain via transfer matrices.
    pub fn mps_overlap(&self, other: &MpsPrototype<T>) -> Result<LogOverlap<T>> {
        if self.len() != other.len() || self.phys_dim() != other.phys_dim() {
            return Err(QpplError::ShapeMismatch(format!(
                "MPS with {} sites of dim {} vs {} sites of dim {}",
                self.len(),
                self.phys_dim(),
                other.len(),
                other.phys_dim()
            )));
        }
        let mut e = BondMatrix::identity_1x1();
        let mut log_acc = T::zero();
        for (a, b) in self.sites().iter().zip(other.sites()) {
            e = transfer_left(&e, a, b);
            match rescale(&mut e.data) {
                Some(ln) => log_acc += ln,
                None => return Ok(LogOverlap::zero()),
            }
        }
        Ok(LogOverlap::from_value(e.data[0]).scaled_down(-log_acc))
    }

    pub(crate) fn sample_environments(&self, phi: &EncodedSample<T>) -> Result<SampleEnvironments<T>> {
        self.check_sample(phi)?;
        let n = self.len();
        let mut left = Vec::with_capacity(n + 1);
        let mut left_log = Vec::with_capacity(n + 1);
        left.push(vec![T::one()]);
        left_log.push(T::zero());
        let mut zero = false;
        for (m, t) in self.sites().iter().enumerate() {
            let mut next = Vec::new();
            if !zero {
                push_vector_left(&left[m], t, phi.local(m), &mut next);
            }
            let ln = if zero { None } else { rescale(&mut next) };
            match ln {
                Some(ln) => left_log.push(left_log[m] + ln),
                None => {
                    zero = true;
                    next = vec![T::zero(); t.shape().2];
                    left_log.push(T::neg_infinity());
                }
            }
            left.push(next);
        }
        let overlap =
            if zero { LogOverlap::zero() } else { LogOverlap::from_value(left[n][0]).scaled_down(-left_log[n]) };

        let mut right = vec![Vec::new(); n + 1];
        let mut right_log = vec![T::zero(); n + 1];
        right[n] = vec![T::one()];
        let mut zero = false;
        for m in (0..n).rev() {
            let t = self.site(m);
            let mut next = Vec::new();
            if !zero {
                push_vector_right(&right[m + 1], t, phi.local(m), &mut next);
            }
            let ln = if zero { None } else { rescale(&mut next) };
            match ln {
                Some(ln) => right_log[m] = right_log[m + 1] + ln,
                None => {
                    zero = true;
                    next = vec![T::zero(); t.shape().1];
                    right_log[m] = T::neg_infinity();
                }
            }
            right[m] = next;
        }
        Ok(SampleEnvironments { left, left_log, right, right_log, overlap })
    }

    pub(crate) fn norm_environments(&self) -> NormEnvironments<T> {
        let n = self.len();
        let mut left = Vec::with_capacity(n + 1);
        let mut left_log = Vec::with_capacity(n + 1);
        left.push(BondMatrix::identity_1x1());
        left_log.push(T::zero());
        for (m, t) in self.sites().iter().enumerate() {
            let mut e = transfer_left(&left[m], t, t);
            let ln = rescale(&mut e.data).unwrap_or(T::neg_infinity());
            left_log.push(left_log[m] + ln);
            left.push(e);
        }
        let log_norm_sqr = left_log[n] + left[n].data[0].abs().ln();

        let mut right = vec![BondMatrix::identity_1x1(); n + 1];
        let mut right_log = vec![T::zero(); n + 1];
        for m in (0..n).rev() {
            let t = self.site(m);
            let mut f = transfer_right(&right[m + 1], t, t);
            let ln = rescale(&mut f.data).unwrap_or(T::neg_infinity());
            right_log[m] = right_log[m + 1] + ln;
            right[m] = f;
        }
        NormEnvironments { left, left_log, right, right_log, log_norm_sqr }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{InitMode, PrototypeMeta};
    use super::*;
    use crate::encoding::EncodingConfig;

    #[test]
    fn product_state_overlap_with_itself() {
        let phi = EncodedSample::from_scaled(&[0.1f64, 0.7, 0.3, 1.0], &EncodingConfig::default());
        let psi = MpsPrototype::from_product(&phi);
        let ov = psi.sample_overlap(&phi).unwrap();
        assert_eq!(ov.sign, Sign::Positive);
        assert!(ov.log_magnitude.abs() < 1e-15);
    }

    #[test]
    fn orthogonal_site_gives_zero() {
        let a = EncodedSample::from_locals(vec![0.6f64, 0.8, 1.0, 0.0, 0.0, 1.0], 2).unwrap();
        let b = EncodedSample::from_locals(vec![0.6f64, 0.8, 0.0, 1.0, 0.0, 1.0], 2).unwrap();
        let psi = MpsPrototype::from_product(&a);
        let ov = psi.sample_overlap(&b).unwrap();
        assert!(ov.is_zero());
        assert_eq!(ov.log_magnitude, f64::NEG_INFINITY);
        let ov = psi.mps_overlap(&MpsPrototype::from_product(&b)).unwrap();
        assert!(ov.is_zero());
    }

    #[test]
    fn self_overlap_after_normalization() {
        let psi = MpsPrototype::<f64>::init_random(10, 2, 4, 1, InitMode::Gaussian).unwrap();
        let ov = psi.mps_overlap(&psi).unwrap();
        assert_eq!(ov.sign, Sign::Positive);
        assert!(ov.log_magnitude.abs() < 1e-10);
    }

    #[test]
    fn long_chain_does_not_underflow() {
        let phi = EncodedSample::from_scaled(&vec![0.0; 10_000], &EncodingConfig::default());
        let psi = MpsPrototype::from_product(&phi).with_meta(PrototypeMeta::default());
        let ov = psi.sample_overlap(&phi).unwrap();
        assert_eq!(ov.log_magnitude, 0.0);
        assert_eq!(ov.sign, Sign::Positive);

        // 0.5^10000 underflows as a plain product but not here.
        let half = EncodedSample::from_scaled(&vec![2.0 / 3.0; 10_000], &EncodingConfig::default());
        let ov = psi.sample_overlap(&half).unwrap();
        assert!((ov.log_magnitude - 10_000.0 * 0.5f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn environments_reproduce_overlap_at_every_cut() {
        let psi = MpsPrototype::<f64>::init_random(7, 2, 3, 4, InitMode::Gaussian).unwrap();
        let phi = EncodedSample::from_scaled(&[0.1, 0.9, 0.4, 0.3, 0.8, 0.5, 0.2], &EncodingConfig::default());
        let env = psi.sample_environments(&phi).unwrap();
        let direct = psi.sample_overlap(&phi).unwrap();
        assert_eq!(env.overlap.sign, direct.sign);
        assert!((env.overlap.log_magnitude - direct.log_magnitude).abs() < 1e-12);
        for cut in 0..=7 {
            let dot: f64 = env.left[cut].iter().zip(&env.right[cut]).map(|(a, b)| a * b).sum();
            let v = dot * (env.left_log[cut] + env.right_log[cut]).exp();
            assert!((v - direct.value()).abs() < 1e-12 * direct.value().abs().max(1e-300));
        }
        let norm = psi.norm_environments();
        assert!(norm.log_norm_sqr.abs() < 1e-10);
    }
}
