//! Min/max feature scaling and the qubit feature map
//! `x -> [cos(theta * pi / 2 * x), sin(theta * pi / 2 * x)]`.

use crate::data::LabeledDataset;
use crate::error::{QpplError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleMode {
    /// Independent min/max for every feature column.
    #[default]
    PerFeature,
    /// One min/max shared by all features (image pixels).
    Global,
}

/// Per-feature min/max statistics over flattened `C * M` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler<T> {
    min: Vec<T>,
    max: Vec<T>,
    mode: ScaleMode,
}

impl<T: Scalar> FeatureScaler<T> {
    pub fn from_bounds(min: Vec<T>, max: Vec<T>, mode: ScaleMode) -> Result<Self> {
        if min.len() != max.len() {
            return Err(QpplError::LengthMismatch { expected: min.len(), got: max.len() });
        }
        if let Some(m) = (0..min.len()).find(|&m| !(min[m] <= max[m])) {
            return Err(QpplError::InvalidConfig(format!("feature {m}: min exceeds max")));
        }
        Ok(Self { min, max, mode })
    }

    /// Fits on every sample of `data`. A constant column gets `max = min + 1`
    /// so that it scales to 0.
    pub fn fit(data: &LabeledDataset<T>, mode: ScaleMode) -> Result<Self> {
        if data.is_empty() {
            return Err(QpplError::EmptyDataset);
        }
        let width = data.channels() * data.width();
        let mut min = vec![T::infinity(); width];
        let mut max = vec![T::neg_infinity(); width];
        for i in 0..data.len() {
            for (f, &v) in data.row(i).iter().enumerate() {
                if v.is_finite() {
                    min[f] = min[f].min(v);
                    max[f] = max[f].max(v);
                }
            }
        }
        if let Some(feature) = min.iter().position(|v| !v.is_finite()) {
            return Err(QpplError::NonFiniteFeature { feature });
        }
        if mode == ScaleMode::Global {
            let lo = min.iter().copied().fold(T::infinity(), T::min);
            let hi = max.iter().copied().fold(T::neg_infinity(), T::max);
            min.iter_mut().for_each(|v| *v = lo);
            max.iter_mut().for_each(|v| *v = hi);
        }
        for (lo, hi) in min.iter().zip(max.iter_mut()) {
            if *hi == *lo {
                *hi = *lo + T::one();
            }
        }
        Ok(Self { min, max, mode })
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    pub fn mode(&self) -> ScaleMode {
        self.mode
    }

    pub fn min(&self) -> &[T] {
        &self.min
    }

    pub fn max(&self) -> &[T] {
        &self.max
    }

    /// Scales `x` (offset by `offset` features into the fitted row) into
    /// `[0, 1]`, clamping out-of-range values. Returns the scaled vector and
    /// the number of clamped entries.
    pub fn scale_at(&self, x: &[T], offset: usize) -> Result<(Vec<T>, usize)> {
        if offset + x.len() > self.len() {
            return Err(QpplError::LengthMismatch { expected: self.len() - offset.min(self.len()), got: x.len() });
        }
        let mut clamped = 0;
        let mut out = Vec::with_capacity(x.len());
        for (m, &v) in x.iter().enumerate() {
            if v.is_nan() {
                return Err(QpplError::NonFiniteFeature { feature: offset + m });
            }
            let lo = self.min[offset + m];
            let s = (v - lo) / (self.max[offset + m] - lo);
            if s < T::zero() || s > T::one() {
                clamped += 1;
            }
            out.push(s.max(T::zero()).min(T::one()));
        }
        Ok((out, clamped))
    }

    pub fn scale(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.len() {
            return Err(QpplError::LengthMismatch { expected: self.len(), got: x.len() });
        }
        Ok(self.scale_at(x, 0)?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingConfig {
    /// Maximal rotation as a fraction of `pi / 2`, in `(0, 1]`.
    pub theta: f64,
    pub local_dim: usize,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self { theta: 1.0, local_dim: 2 }
    }
}

impl EncodingConfig {
    pub fn new(theta: f64) -> Result<Self> {
        let config = Self { theta, local_dim: 2 };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(QpplError::InvalidConfig(format!("theta {} not in (0, 1]", self.theta)));
        }
        if self.local_dim != 2 {
            return Err(QpplError::InvalidConfig(format!("local dimension {} unsupported (only 2)", self.local_dim)));
        }
        Ok(())
    }
}

/// Product state: `M` unit vectors of length `d`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample<T> {
    locals: Vec<T>,
    dim: usize,
}

impl<T: Scalar> EncodedSample<T> {
    /// Wraps raw local vectors; they are not renormalized.
    pub fn from_locals(locals: Vec<T>, dim: usize) -> Result<Self> {
        if dim == 0 || locals.is_empty() || locals.len() % dim != 0 {
            return Err(QpplError::InvalidDimension(format!("{} values with local dimension {dim}", locals.len())));
        }
        Ok(Self { locals, dim })
    }

    /// Encodes already-scaled features in `[0, 1]`.
    pub fn from_scaled(scaled: &[T], config: &EncodingConfig) -> Self {
        let half_turn = T::of(config.theta * std::f64::consts::FRAC_PI_2);
        let mut locals = Vec::with_capacity(2 * scaled.len());
        for &x in scaled {
            let angle = half_turn * x;
            locals.push(angle.cos());
            locals.push(angle.sin());
        }
        Self { locals, dim: 2 }
    }

    /// Number of sites `M`.
    pub fn len(&self) -> usize {
        self.locals.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.locals.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn local(&self, m: usize) -> &[T] {
        &self.locals[m * self.dim..(m + 1) * self.dim]
    }

    pub fn locals(&self) -> &[T] {
        &self.locals
    }
}

/// Scales and encodes one single-channel feature vector.
pub fn encode<T: Scalar>(x: &[T], scaler: &FeatureScaler<T>, config: &EncodingConfig) -> Result<EncodedSample<T>> {
    let (scaled, clamped) = if x.len() == scaler.len() {
        scaler.scale_at(x, 0)?
    } else {
        return Err(QpplError::LengthMismatch { expected: scaler.len(), got: x.len() });
    };
    if clamped > 0 {
        log::debug!("clamped {clamped} out-of-range features");
    }
    Ok(EncodedSample::from_scaled(&scaled, config))
}

/// Encodes every sample; the result is indexed `[sample][channel]`.
pub fn encode_dataset<T: Scalar>(
    data: &LabeledDataset<T>,
    scaler: &FeatureScaler<T>,
    config: &EncodingConfig,
) -> Result<Vec<Vec<EncodedSample<T>>>> {
    let width = data.width();
    if data.channels() * width != scaler.len() {
        return Err(QpplError::LengthMismatch { expected: scaler.len(), got: data.channels() * width });
    }
    let mut clamped_total = 0;
    let mut out = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let mut channels = Vec::with_capacity(data.channels());
        for c in 0..data.channels() {
            let (scaled, clamped) = scaler.scale_at(data.channel(i, c), c * width)?;
            clamped_total += clamped;
            channels.push(EncodedSample::from_scaled(&scaled, config));
        }
        out.push(channels);
    }
    if clamped_total > 0 {
        log::info!("clamped {clamped_total} out-of-range feature values to [0, 1]");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> LabeledDataset<f64> {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        LabeledDataset::from_rows(&rows, vec!["a".into(); values.len()]).unwrap()
    }

    #[test]
    fn fit_min_max() {
        let s = FeatureScaler::fit(&column(&[0.0, 5.0, 10.0]), ScaleMode::PerFeature).unwrap();
        assert_eq!((s.min()[0], s.max()[0]), (0.0, 10.0));
    }

    #[test]
    fn constant_column() {
        let s = FeatureScaler::fit(&column(&[3.0, 3.0, 3.0]), ScaleMode::PerFeature).unwrap();
        assert_eq!((s.min()[0], s.max()[0]), (3.0, 4.0));
        assert_eq!(s.scale(&[3.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn global_mode_on_pixels() {
        let rows = vec![vec![0.0, 12.0], vec![255.0, 40.0]];
        let ds = LabeledDataset::from_rows(&rows, vec!["a".into(), "b".into()]).unwrap();
        let s = FeatureScaler::fit(&ds, ScaleMode::Global).unwrap();
        assert_eq!(s.min(), &[0.0, 0.0]);
        assert_eq!(s.max(), &[255.0, 255.0]);
    }

    #[test]
    fn fit_errors() {
        let empty = LabeledDataset::<f64>::new(vec![], 1, 1, vec![], vec![]).unwrap();
        assert!(matches!(FeatureScaler::fit(&empty, ScaleMode::PerFeature), Err(QpplError::EmptyDataset)));
        let nan = column(&[f64::NAN, f64::INFINITY]);
        assert!(matches!(
            FeatureScaler::fit(&nan, ScaleMode::PerFeature),
            Err(QpplError::NonFiniteFeature { feature: 0 })
        ));
    }

    #[test]
    fn encode_endpoints() {
        let s = FeatureScaler::from_bounds(vec![0.0f64; 3], vec![1.0; 3], ScaleMode::PerFeature).unwrap();
        let e = encode(&[0.0, 1.0, 0.5], &s, &EncodingConfig::default()).unwrap();
        assert_eq!(e.local(0), &[1.0, 0.0]);
        assert!(e.local(1)[0].abs() < 1e-16 && e.local(1)[1] == 1.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.local(2)[0] - h).abs() < 1e-15 && (e.local(2)[1] - h).abs() < 1e-15);
    }

    #[test]
    fn encode_clamps_out_of_range() {
        let s = FeatureScaler::from_bounds(vec![0.0; 2], vec![1.0; 2], ScaleMode::PerFeature).unwrap();
        let e = encode(&[-3.0, 7.0], &s, &EncodingConfig::default()).unwrap();
        assert_eq!(e.local(0), &[1.0, 0.0]);
        assert_eq!(e.local(1)[1], 1.0);
    }

    #[test]
    fn encode_length_mismatch() {
        let s = FeatureScaler::from_bounds(vec![0.0; 2], vec![1.0; 2], ScaleMode::PerFeature).unwrap();
        assert!(matches!(
            encode(&[0.1], &s, &EncodingConfig::default()),
            Err(QpplError::LengthMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn encode_dataset_shapes() {
        let rows = vec![vec![0.0, 1.0, 2.0], vec![2.0, 1.0, 0.0]];
        let ds = LabeledDataset::from_rows(&rows, vec!["a".into(), "b".into()]).unwrap();
        let s = FeatureScaler::fit(&ds, ScaleMode::PerFeature).unwrap();
        let enc = encode_dataset(&ds, &s, &EncodingConfig::default()).unwrap();
        assert_eq!(enc.len(), 2);
        assert_eq!(enc[0].len(), 1);
        assert_eq!(enc[0][0].len(), 3);

        let twelve = LabeledDataset::new(
            (0..2 * 12 * 4).map(|v| v as f64).collect(),
            12,
            4,
            vec!["x".into(); 2],
            vec!["0".into(), "1".into()],
        )
        .unwrap();
        let s = FeatureScaler::fit(&twelve, ScaleMode::PerFeature).unwrap();
        let enc = encode_dataset(&twelve, &s, &EncodingConfig::default()).unwrap();
        assert!(enc.iter().all(|channels| channels.len() == 12));

        let empty = LabeledDataset::<f64>::new(vec![], 1, 3, vec![], vec![]).unwrap();
        let s = FeatureScaler::from_bounds(vec![0.0; 3], vec![1.0; 3], ScaleMode::PerFeature).unwrap();
        assert!(encode_dataset(&empty, &s, &EncodingConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn theta_validation() {
        assert!(EncodingConfig::new(0.0).is_err());
        assert!(EncodingConfig::new(1.5).is_err());
        assert!(EncodingConfig::new(0.3).is_ok());
    }

    proptest! {
        #[test]
        fn locals_have_unit_norm(xs in prop::collection::vec(0.0f64..=1.0, 1..20), theta in 0.01f64..=1.0) {
            let e = EncodedSample::from_scaled(&xs, &EncodingConfig { theta, local_dim: 2 });
            for m in 0..e.len() {
                let v = e.local(m);
                prop_assert!((v[0] * v[0] + v[1] * v[1] - 1.0).abs() < 1e-12);
                prop_assert!(v[0] >= 0.0 && v[1] >= 0.0);
            }
        }

        #[test]
        fn overlap_monotone_in_distance(mut abc in prop::array::uniform3(0.0f64..=1.0), theta in 0.01f64..=1.0) {
            abc.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let config = EncodingConfig { theta, local_dim: 2 };
            let e = EncodedSample::from_scaled(&abc, &config);
            let dot = |i: usize, j: usize| e.local(i)[0] * e.local(j)[0] + e.local(i)[1] * e.local(j)[1];
            prop_assert!(dot(0, 1) >= dot(0, 2) - 1e-15);
        }

        #[test]
        fn scaling_is_idempotent(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 2..12)) {
            let ds = LabeledDataset::from_rows(&rows, vec!["a".into(); rows.len()]).unwrap();
            let s = FeatureScaler::fit(&ds, ScaleMode::PerFeature).unwrap();
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| s.scale(r).unwrap()).collect();
            prop_assert!(scaled.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            let ds2 = LabeledDataset::from_rows(&scaled, vec!["a".into(); rows.len()]).unwrap();
            let s2 = FeatureScaler::fit(&ds2, ScaleMode::PerFeature).unwrap();
            for r in &scaled {
                let again = s2.scale(r).unwrap();
                for (a, b) in again.iter().zip(r) {
                    // constant columns scale to 0 and stay 0
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
