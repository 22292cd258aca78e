use crate::error::{QpplError, Result};

/// Cuts a `channels x len` series (channel-major) into sliding windows of
/// `channels x window` values each, advancing by `stride`.
pub fn window_segments<T: Copy>(series: &[T], channels: usize, window: usize, stride: usize) -> Result<Vec<Vec<T>>> {
    if channels == 0 || series.len() % channels != 0 {
        return Err(QpplError::ShapeMismatch(format!("{} values do not split into {channels} channels", series.len())));
    }
    if window == 0 || stride == 0 {
        return Err(QpplError::InvalidDimension("window and stride must be positive".into()));
    }
    let len = series.len() / channels;
    if window > len {
        return Err(QpplError::WindowTooLarge { window, len });
    }
    let count = (len - window) / stride + 1;
    Ok((0..count)
        .map(|k| {
            let start = k * stride;
            (0..channels).flat_map(|c| series[c * len + start..c * len + start + window].iter().copied()).collect()
        })
        .collect())
}
