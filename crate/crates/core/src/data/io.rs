//! Dataset record files (integers little-endian):
//!
//! ```text
//! "MLDS"  u32 version  u32 count  u32 n_classes  u16 height  u16 width  u8 channels
//! per record: u8 label, u16 id length, id bytes, H·W·C pixel bytes (channel-major)
//! ```
//!
//! Pixels are stored as `round(255·v)` and read back as `byte / 255`.

use std::fs;
use std::path::Path;

use super::{default_class_names, Dataset, Sample};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::scalar::Scalar;

pub const DATASET_MAGIC: &[u8; 4] = b"MLDS";
pub const DATASET_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 2 + 2 + 1;

pub fn encode<T: Scalar>(ds: &Dataset<T>) -> Result<Vec<u8>> {
    ds.validate()?;
    let (h, w) = ds.image_size()?.unwrap_or((0, 0));
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("image {h}x{w} too large for record format")));
    }
    if ds.n_classes() > 256 {
        return Err(Error::InvalidArgument("record format holds at most 256 classes".into()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * (3 + 3 * h * w + 16));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.n_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    out.push(3);
    for s in &ds.samples {
        if s.id.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!("id of {} bytes too long", s.id.len())));
        }
        out.push(s.label as u8);
        out.extend_from_slice(&(s.id.len() as u16).to_le_bytes());
        out.extend_from_slice(s.id.as_bytes());
        out.extend(s.image.data().iter().map(|v| (v.as_f64() * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn store<T: Scalar>(ds: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(ds)?)?;
    Ok(())
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptHeader(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(Error::BadMagic {
            expected: "MLDS".into(),
            found: bytes[..4].to_vec(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().unwrap()) as usize;
    let version = u32_at(4);
    if version != DATASET_VERSION {
        return Err(Error::VersionMismatch {
            expected: DATASET_VERSION,
            found: version,
        });
    }
    let count = u32_at(8) as usize;
    let n_classes = u32_at(12) as usize;
    let (h, w, c) = (u16_at(16), u16_at(18), bytes[20] as usize);
    if n_classes == 0 || n_classes > 256 {
        return Err(Error::CorruptHeader(format!("n_classes = {n_classes}")));
    }
    if c != 3 {
        return Err(Error::CorruptHeader(format!("channels = {c}, expected 3")));
    }
    if count > 0 && (h == 0 || w == 0) {
        return Err(Error::CorruptHeader(format!("image size {h}x{w}")));
    }
    let pixels = 3 * h * w;
    let mut pos = HEADER_LEN;
    let mut samples = Vec::with_capacity(count);
    for r in 0..count {
        if bytes.len() < pos + 3 {
            return Err(Error::Truncated(format!("record {r} of {count}: header")));
        }
        let label = bytes[pos] as usize;
        let id_len = u16_at(pos + 1);
        pos += 3;
        if bytes.len() < pos + id_len + pixels {
            return Err(Error::Truncated(format!("record {r} of {count}: body")));
        }
        if label >= n_classes {
            return Err(Error::LabelOutOfRange { label, n_classes });
        }
        let id = String::from_utf8(bytes[pos..pos + id_len].to_vec())
            .map_err(|_| Error::CorruptHeader(format!("record {r}: id is not UTF-8")))?;
        pos += id_len;
        let data = bytes[pos..pos + pixels]
            .iter()
            .map(|&b| T::of(b as f64 / 255.0))
            .collect();
        pos += pixels;
        samples.push(Sample {
            image: Tensor::new([3, h, w], data)?,
            label,
            id,
        });
    }
    if pos != bytes.len() {
        return Err(Error::CorruptHeader(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - pos
        )));
    }
    Ok(Dataset {
        samples,
        class_names: default_class_names(n_classes),
    })
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    decode(&fs::read(path)?)
}
