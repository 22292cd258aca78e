//! Binary model file, little-endian:
//!
//! ```text
//! "QPPL" | version u16 | M u32 | d u16 | chi u32 | theta f64
//!        | label_len u32 | label utf-8 | channel u16
//!        | M x { shape (d, left, right) as 3 x u32 | f64 payload, row-major }
//!        | crc32 of all preceding bytes (u32)
//! ```

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{MpsPrototype, PrototypeMeta, SiteTensor};
use crate::error::{QpplError, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"QPPL";
pub const FORMAT_VERSION: u16 = 1;

pub fn write_to<T: Scalar, W: Write>(psi: &MpsPrototype<T>, mut w: W) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 8 * psi.num_params());
    buf.extend_from_slice(MAGIC);
    buf.write_u16::<LittleEndian>(FORMAT_VERSION)?;
    buf.write_u32::<LittleEndian>(psi.len() as u32)?;
    buf.write_u16::<LittleEndian>(psi.phys_dim() as u16)?;
    buf.write_u32::<LittleEndian>(psi.bond_dim() as u32)?;
    buf.write_f64::<LittleEndian>(psi.meta.theta)?;
    let label = psi.meta.class_label.as_bytes();
    buf.write_u32::<LittleEndian>(label.len() as u32)?;
    buf.extend_from_slice(label);
    buf.write_u16::<LittleEndian>(psi.meta.channel)?;
    for t in psi.sites() {
        let (d, l, r) = t.shape();
        for dim in [d, l, r] {
            buf.write_u32::<LittleEndian>(dim as u32)?;
        }
        for &v in t.data() {
            buf.write_f64::<LittleEndian>(v.as_f64())?;
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.write_u32::<LittleEndian>(crc)?;
    w.write_all(&buf)?;
    Ok(())
}

pub fn save<T: Scalar>(psi: &MpsPrototype<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_to(psi, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<MpsPrototype<T>> {
    let bytes = std::fs::read(path)?;
    read_from(&bytes)
}

fn corrupt(msg: impl Into<String>) -> QpplError {
    QpplError::CorruptFile(msg.into())
}

pub fn read_from<T: Scalar>(bytes: &[u8]) -> Result<MpsPrototype<T>> {
    if bytes.len() < 4 + 2 + 4 {
        return Err(corrupt("file too short"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let mut cur = Cursor::new(&body[4..]);
    let trunc = |_| corrupt("unexpected end of file");
    let version = cur.read_u16::<LittleEndian>().map_err(trunc)?;
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version} (expected {FORMAT_VERSION})")));
    }
    let stored_crc = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored_crc {
        return Err(corrupt("checksum mismatch"));
    }
    let len = cur.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let d = cur.read_u16::<LittleEndian>().map_err(trunc)? as usize;
    let chi = cur.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    let theta = cur.read_f64::<LittleEndian>().map_err(trunc)?;
    let label_len = cur.read_u32::<LittleEndian>().map_err(trunc)? as usize;
    if label_len > body.len() {
        return Err(corrupt("label length exceeds file size"));
    }
    let mut label = vec![0u8; label_len];
    cur.read_exact(&mut label).map_err(trunc)?;
    let class_label = String::from_utf8(label).map_err(|_| corrupt("class label is not UTF-8"))?;
    let channel = cur.read_u16::<LittleEndian>().map_err(trunc)?;
    if len == 0 {
        return Err(QpplError::ShapeInconsistency("model has zero sites".into()));
    }

    let mut sites = Vec::with_capacity(len);
    for m in 0..len {
        let sd = cur.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let sl = cur.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        let sr = cur.read_u32::<LittleEndian>().map_err(trunc)? as usize;
        if sd != d {
            return Err(QpplError::ShapeInconsistency(format!("site {m} has physical dim {sd}, header says {d}")));
        }
        let count = sd.checked_mul(sl).and_then(|x| x.checked_mul(sr)).filter(|&c| c * 8 <= body.len());
        let count = count.ok_or_else(|| QpplError::ShapeInconsistency(format!("site {m} shape too large")))?;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(T::of(cur.read_f64::<LittleEndian>().map_err(trunc)?));
        }
        sites.push(SiteTensor::from_vec(data, sd, sl, sr)?);
    }
    if (cur.position() as usize) != body.len() - 4 {
        return Err(corrupt("trailing bytes after last tensor"));
    }
    let mut psi = MpsPrototype::from_sites(sites, chi, PrototypeMeta { class_label, channel, theta })?;
    psi.log_norm();
    Ok(psi)
}
