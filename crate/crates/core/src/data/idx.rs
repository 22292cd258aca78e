use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};

use super::LabeledDataset;
use crate::error::{QpplError, Result};
use crate::scalar::Scalar;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IdxOptions {
    /// 2x2 mean pooling (28x28 becomes 14x14).
    pub downsample: bool,
    /// Keep only the first `limit` items.
    pub limit: Option<usize>,
}

/// Loads an IDX image/label file pair. Pixels are kept on the 0..=255 scale.
pub fn load_idx<T: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    options: IdxOptions,
) -> Result<LabeledDataset<T>> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    load_idx_bytes(&images, &labels, options)
}

pub fn load_idx_bytes<T: Scalar>(images: &[u8], labels: &[u8], options: IdxOptions) -> Result<LabeledDataset<T>> {
    let (count, rows, cols, pixels) = parse_images(images)?;
    let label_bytes = parse_labels(labels)?;
    if count != label_bytes.len() {
        return Err(QpplError::CountMismatch { images: count, labels: label_bytes.len() });
    }
    let keep = options.limit.map_or(count, |l| l.min(count));
    let per_image = rows * cols;
    let (out_rows, out_cols) = if options.downsample { (rows / 2, cols / 2) } else { (rows, cols) };
    let mut features = Vec::with_capacity(keep * out_rows * out_cols);
    for img in pixels.chunks_exact(per_image).take(keep) {
        if options.downsample {
            for r in 0..out_rows {
                for c in 0..out_cols {
                    let sum: u32 = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(dr, dc)| img[(2 * r + dr) * cols + 2 * c + dc] as u32)
                        .sum();
                    features.push(T::of(sum as f64 / 4.0));
                }
            }
        } else {
            features.extend(img.iter().map(|&p| T::of(p as f64)));
        }
    }
    let labels = label_bytes[..keep].iter().map(|l| l.to_string()).collect();
    let ids = (0..keep).map(|i| i.to_string()).collect();
    LabeledDataset::new(features, 1, out_rows * out_cols, labels, ids)
}

fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, "image header")?;
    if magic != IMAGE_MAGIC {
        return Err(QpplError::BadMagic { expected: IMAGE_MAGIC, found: magic });
    }
    let count = read_u32(&mut cur, "image header")? as usize;
    let rows = read_u32(&mut cur, "image header")? as usize;
    let cols = read_u32(&mut cur, "image header")? as usize;
    let need = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(QpplError::TruncatedFile(format!("image payload has {} of {need} bytes", payload.len())));
    }
    Ok((count, rows, cols, &payload[..need]))
}

fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, "label header")?;
    if magic != LABEL_MAGIC {
        return Err(QpplError::BadMagic { expected: LABEL_MAGIC, found: magic });
    }
    let count = read_u32(&mut cur, "label header")? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(QpplError::TruncatedFile(format!("label payload has {} of {count} bytes", payload.len())));
    }
    Ok(&payload[..count])
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    r.read_u32::<BigEndian>().map_err(|_| QpplError::TruncatedFile(format!("{what} too short")))
}

/// Serializes single-channel image data back into IDX bytes. Values are
/// rounded to the nearest byte.
pub fn write_idx_images<T: Scalar>(data: &LabeledDataset<T>, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if data.channels() != 1 || data.width() != rows * cols {
        return Err(QpplError::ShapeMismatch(format!(
            "{} channels of width {} do not form {rows}x{cols} images",
            data.channels(),
            data.width()
        )));
    }
    let mut out = Vec::with_capacity(16 + data.features().len());
    out.write_u32::<BigEndian>(IMAGE_MAGIC)?;
    out.write_u32::<BigEndian>(data.len() as u32)?;
    out.write_u32::<BigEndian>(rows as u32)?;
    out.write_u32::<BigEndian>(cols as u32)?;
    out.extend(data.features().iter().map(|v| v.as_f64().round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn write_idx_labels<T: Scalar>(data: &LabeledDataset<T>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + data.len());
    out.write_u32::<BigEndian>(LABEL_MAGIC)?;
    out.write_u32::<BigEndian>(data.len() as u32)?;
    for l in data.labels() {
        let byte: u8 = l.parse().map_err(|_| QpplError::SchemaMismatch(format!("label `{l}` is not a byte")))?;
        out.push(byte);
    }
    Ok(out)
}
