//! Matrix product state prototypes.
//!
//! A prototype over `M` sites of physical dimension `d` is a chain of real
//! order-3 tensors `A[m]` with shape `(d, left, right)`; the outer bonds have
//! dimension 1. All contractions run in the log domain: partial results are
//! rescaled to unit max-norm after each site and the scale factors are summed
//! as logarithms, so overlaps of thousands of sites neither underflow nor
//! overflow.

mod contract;
mod io;

pub use contract::{LogOverlap, Sign};
pub use io::{load, read_from, save, write_to, FORMAT_VERSION, MAGIC};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::encoding::EncodedSample;
use crate::error::{QpplError, Result};
use crate::scalar::Scalar;

/// One MPS tensor of shape `(phys, left, right)`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteTensor<T> {
    data: Vec<T>,
    phys: usize,
    left: usize,
    right: usize,
}

impl<T: Scalar> SiteTensor<T> {
    pub fn zeros(phys: usize, left: usize, right: usize) -> Self {
        Self { data: vec![T::zero(); phys * left * right], phys, left, right }
    }

    pub fn from_vec(data: Vec<T>, phys: usize, left: usize, right: usize) -> Result<Self> {
        if data.len() != phys * left * right || phys == 0 || left == 0 || right == 0 {
            return Err(QpplError::ShapeInconsistency(format!(
                "{} values for tensor shape ({phys}, {left}, {right})",
                data.len()
            )));
        }
        Ok(Self { data, phys, left, right })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.phys, self.left, self.right)
    }

    #[inline]
    pub fn get(&self, s: usize, l: usize, r: usize) -> T {
        self.data[(s * self.left + l) * self.right + r]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// The `left x right` matrix for physical index `s`.
    #[inline]
    pub(crate) fn slice(&self, s: usize) -> &[T] {
        let n = self.left * self.right;
        &self.data[s * n..(s + 1) * n]
    }

    pub fn scale(&mut self, c: T) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn norm_sqr(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }
}

/// Identity of a prototype inside a trained set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrototypeMeta {
    pub class_label: String,
    pub channel: u16,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// i.i.d. N(0, 1/sqrt(d * chi)) entries.
    Gaussian,
    /// All-ones tensors plus N(0, 0.01) noise; starts near the uniform
    /// superposition, which overlaps every nonnegative product state.
    #[default]
    NearUniform,
    /// Identity matrices per physical index (ones on the boundary bonds)
    /// plus N(0, 0.01) noise. Same starting state as `NearUniform`, but in a
    /// gauge where every bond channel carries equal weight.
    NearIdentity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpsPrototype<T> {
    sites: Vec<SiteTensor<T>>,
    bond_dim: usize,
    log_norm_cache: Option<T>,
    pub meta: PrototypeMeta,
}

impl<T: Scalar> MpsPrototype<T> {
    /// Validates bond consistency and builds a prototype. `bond_dim` is the
    /// configured maximal interior bond.
    pub fn from_sites(sites: Vec<SiteTensor<T>>, bond_dim: usize, meta: PrototypeMeta) -> Result<Self> {
        let Some(first) = sites.first() else {
            return Err(QpplError::InvalidDimension("an MPS needs at least one site".into()));
        };
        let d = first.phys;
        if first.left != 1 || sites[sites.len() - 1].right != 1 {
            return Err(QpplError::ShapeInconsistency("boundary bonds must have dimension 1".into()));
        }
        for (m, t) in sites.iter().enumerate() {
            if t.phys != d {
                return Err(QpplError::ShapeInconsistency(format!("site {m} has physical dim {} != {d}", t.phys)));
            }
            if t.left > bond_dim || t.right > bond_dim {
                return Err(QpplError::ShapeInconsistency(format!("site {m} exceeds bond dimension {bond_dim}")));
            }
            if m + 1 < sites.len() && t.right != sites[m + 1].left {
                return Err(QpplError::ShapeInconsistency(format!(
                    "bond between sites {m} and {} mismatched ({} vs {})",
                    m + 1,
                    t.right,
                    sites[m + 1].left
                )));
            }
        }
        Ok(Self { sites, bond_dim, log_norm_cache: None, meta })
    }

    /// Seeded random prototype, normalized so that its log-norm is 0.
    pub fn init_random(len: usize, d: usize, bond_dim: usize, seed: u64, mode: InitMode) -> Result<Self> {
        if len == 0 || d == 0 || bond_dim == 0 {
            return Err(QpplError::InvalidDimension(format!("M = {len}, d = {d}, chi = {bond_dim}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = match mode {
            InitMode::Gaussian => 1.0 / ((d * bond_dim) as f64).sqrt(),
            InitMode::NearUniform | InitMode::NearIdentity => 0.01,
        };
        let dist = Normal::new(0.0, std).expect("positive std");
        let sites = (0..len)
            .map(|m| {
                let left = if m == 0 { 1 } else { bond_dim };
                let right = if m + 1 == len { 1 } else { bond_dim };
                let data = (0..d * left * right)
                    .map(|k| {
                        let (l, r) = ((k / right) % left, k % right);
                        let base = match mode {
                            InitMode::Gaussian => 0.0,
                            InitMode::NearUniform => 1.0,
                            InitMode::NearIdentity => (l == r || left == 1 || right == 1) as u8 as f64,
                        };
                        T::of(base + dist.sample(&mut rng))
                    })
                    .collect();
                SiteTensor { data, phys: d, left, right }
            })
            .collect();
        let mut psi = Self { sites, bond_dim, log_norm_cache: None, meta: PrototypeMeta::default() };
        psi.normalize();
        Ok(psi)
    }

    /// Exact copy of a product state as a bond-dimension-1 MPS.
    pub fn from_product(phi: &EncodedSample<T>) -> Self {
        let d = phi.dim();
        let sites =
            (0..phi.len()).map(|m| SiteTensor { data: phi.local(m).to_vec(), phys: d, left: 1, right: 1 }).collect();
        Self { sites, bond_dim: 1, log_norm_cache: None, meta: PrototypeMeta::default() }
    }

    pub fn with_meta(mut self, meta: PrototypeMeta) -> Self {
        self.meta = meta;
        self
    }

    /// Number of sites `M`.
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn phys_dim(&self) -> usize {
        self.sites[0].phys
    }

    pub fn bond_dim(&self) -> usize {
        self.bond_dim
    }

    pub fn sites(&self) -> &[SiteTensor<T>] {
        &self.sites
    }

    pub fn site(&self, m: usize) -> &SiteTensor<T> {
        &self.sites[m]
    }

    /// Mutable access to a site; invalidates the cached log-norm.
    pub fn site_mut(&mut self, m: usize) -> &mut SiteTensor<T> {
        self.log_norm_cache = None;
        &mut self.sites[m]
    }

    /// Number of real parameters.
    pub fn num_params(&self) -> usize {
        self.sites.iter().map(|t| t.data.len()).sum()
    }

    /// `ln ||psi||`, recomputed from the tensors. Does not touch the cache.
    pub fn compute_log_norm(&self) -> T {
        T::of(0.5) * self.mps_overlap(self).expect("an MPS matches itself").log_magnitude
    }

    /// `ln ||psi||`, recomputed and stored in the cache.
    pub fn log_norm(&mut self) -> T {
        let v = self.compute_log_norm();
        self.log_norm_cache = Some(v);
        v
    }

    /// Cached `ln ||psi||` when valid, otherwise computed on the fly.
    pub fn cached_log_norm(&self) -> T {
        self.log_norm_cache.unwrap_or_else(|| self.compute_log_norm())
    }

    pub fn is_log_norm_cached(&self) -> bool {
        self.log_norm_cache.is_some()
    }

    /// Rescales every tensor by `exp(-ln||psi|| / M)` so the state has unit
    /// norm.
    pub fn normalize(&mut self) {
        let ln = self.compute_log_norm();
        if !ln.is_finite() {
            return;
        }
        let factor = (-ln / T::of(self.len() as f64)).exp();
        self.sites.iter_mut().for_each(|t| t.scale(factor));
        // zero up to rounding; store the recomputed value so a state rebuilt
        // from the same tensors (e.g. loaded from disk) scores identically
        self.log_norm();
    }

    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        out.normalize();
        out
    }

    /// Applies `A[m] <- A[m] - step * grad[m]` to every site.
    pub(crate) fn apply_update(&mut self, grad: &[SiteTensor<T>], step: T) {
        for (t, g) in self.sites.iter_mut().zip(grad) {
            for (a, &b) in t.data.iter_mut().zip(&g.data) {
                *a -= step * b;
            }
        }
        self.log_norm_cache = None;
    }

    pub(crate) fn check_sample(&self, phi: &EncodedSample<T>) -> Result<()> {
        if phi.len() != self.len() || phi.dim() != self.phys_dim() {
            return Err(QpplError::ShapeMismatch(format!(
                "sample has {} sites of dim {}, prototype has {} of dim {}",
                phi.len(),
                phi.dim(),
                self.len(),
                self.phys_dim()
            )));
        }
        Ok(())
    }

    /// Zero tensors with this prototype's shapes.
    pub(crate) fn zeros_like(&self) -> Vec<SiteTensor<T>> {
        self.sites.iter().map(|t| SiteTensor::zeros(t.phys, t.left, t.right)).collect()
    }
}
