//! IDX files (the MNIST/USPS distribution format): big-endian headers,
//! `0x00000803` for u8 image cubes and `0x00000801` for u8 label vectors.

use std::path::Path;

use super::{DomainSource, Labels};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::format(at, format!("truncated {what}")))
}

fn parse_images(bytes: &[u8]) -> Result<(usize, Vec<f32>)> {
    let magic = be_u32(bytes, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(0, format!("bad image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::format(8, "images must have positive extents"));
    }
    let body = &bytes[16..];
    let need = n * dim;
    if body.len() < need {
        return Err(Error::format(
            16 + body.len(),
            format!(
                "truncated pixel data: need {need} bytes, have {}",
                body.len()
            ),
        ));
    }
    if body.len() > need {
        return Err(Error::format(16 + need, "trailing bytes after pixel data"));
    }
    Ok((dim, body.iter().map(|&p| p as f32 / 255.0).collect()))
}

fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, "label magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(0, format!("bad label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::format(8 + body.len(), "truncated label data"));
    }
    if body.len() > n {
        return Err(Error::format(8 + n, "trailing bytes after label data"));
    }
    Ok(body.iter().map(|&l| l as usize).collect())
}

/// Parses in-memory IDX image (and optional label) files.
pub fn parse_idx(images: &[u8], labels: Option<&[u8]>) -> Result<DomainSource> {
    let (dim, pixels) = parse_images(images)?;
    let n = pixels.len() / dim;
    let labels = match labels {
        Some(bytes) => {
            let l = parse_labels(bytes)?;
            if l.len() != n {
                return Err(Error::format(
                    4,
                    format!("{} labels for {n} images", l.len()),
                ));
            }
            Some(Labels::new(l))
        }
        None => None,
    };
    DomainSource::new(dim, pixels, labels)
}

/// Reads an IDX image file, pairing it with a label file when given.
pub fn load_idx(images: impl AsRef<Path>, labels: Option<&Path>) -> Result<DomainSource> {
    let img = std::fs::read(images)?;
    let lab = labels.map(std::fs::read).transpose()?;
    parse_idx(&img, lab.as_deref())
}
