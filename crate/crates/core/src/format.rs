//! Binary interchange formats.
//!
//! Map files: `b"CAMM"`, `u32 height`, `u32 width`, then `height * width`
//! `f32` values, row-major. Image files: `b"IMGT"`, `u32 channels`,
//! `u32 height`, `u32 width`, then planar `f32` values. All little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::map::ActivationMap;

pub const MAP_MAGIC: &[u8; 4] = b"CAMM";
pub const IMAGE_MAGIC: &[u8; 4] = b"IMGT";

fn malformed(kind: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        kind,
        reason: reason.into(),
    }
}

struct Reader<'a> {
    kind: &'static str,
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(malformed(self.kind, "unexpected end of data"));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let expected = count
            .checked_mul(4)
            .ok_or_else(|| malformed(self.kind, "header dimensions overflow"))?;
        if self.bytes.len() != expected {
            return Err(malformed(
                self.kind,
                format!("expected {expected} payload bytes, found {}", self.bytes.len()),
            ));
        }
        let payload = self.take(expected)?;
        Ok(payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn encode_map(map: &ActivationMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * map.len());
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    for &v in map.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_map(bytes: &[u8]) -> Result<ActivationMap> {
    let mut r = Reader { kind: "map", bytes };
    if r.take(4)? != MAP_MAGIC {
        return Err(malformed("map", "bad magic, expected CAMM"));
    }
    let height = r.u32()?;
    let width = r.u32()?;
    let count = height
        .checked_mul(width)
        .ok_or_else(|| malformed("map", "header dimensions overflow"))?;
    let values = r.f32s(count)?;
    ActivationMap::new(height, width, values.into_iter().map(f64::from).collect())
}

pub fn encode_image(image: &ImageTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * image.values().len());
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&(image.channels() as u32).to_le_bytes());
    out.extend_from_slice(&(image.height() as u32).to_le_bytes());
    out.extend_from_slice(&(image.width() as u32).to_le_bytes());
    for &v in image.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<ImageTensor> {
    let mut r = Reader {
        kind: "image",
        bytes,
    };
    if r.take(4)? != IMAGE_MAGIC {
        return Err(malformed("image", "bad magic, expected IMGT"));
    }
    let channels = r.u32()?;
    let height = r.u32()?;
    let width = r.u32()?;
    let count = channels
        .checked_mul(height)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| malformed("image", "header dimensions overflow"))?;
    let values = r.f32s(count)?;
    ImageTensor::new(channels, height, width, values)
}

/// Reads a map file; the label defaults to the file stem.
pub fn read_map(path: impl AsRef<Path>) -> Result<ActivationMap> {
    let path = path.as_ref();
    let map = decode_map(&fs::read(path)?)?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(map.with_label(label))
}

pub fn write_map(path: impl AsRef<Path>, map: &ActivationMap) -> Result<()> {
    fs::write(path, encode_map(map))?;
    Ok(())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    decode_image(&fs::read(path)?)
}

pub fn write_image(path: impl AsRef<Path>, image: &ImageTensor) -> Result<()> {
    fs::write(path, encode_image(image))?;
    Ok(())
}
