//! Big-endian IDX image/label files as distributed for MNIST.

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::learner::{Dataset, Example};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn header(bytes: &[u8], expected_magic: u32, words: usize) -> std::result::Result<Vec<u32>, FormatError> {
    let header_len = 4 * words;
    if bytes.len() < header_len {
        return Err(FormatError::Truncated {
            expected: header_len,
            found: bytes.len(),
        });
    }
    let magic = be_u32(bytes, 0).unwrap();
    if magic != expected_magic {
        return Err(FormatError::WrongMagic {
            expected: expected_magic,
            found: magic,
        });
    }
    Ok((1..words).map(|w| be_u32(bytes, 4 * w).unwrap()).collect())
}

/// Decoded image file: `count` images of `rows * cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

pub fn parse_images(bytes: &[u8]) -> std::result::Result<IdxImages, FormatError> {
    let h = header(bytes, IMAGES_MAGIC, 4)?;
    let (count, rows, cols) = (h[0] as usize, h[1] as usize, h[2] as usize);
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..expected].to_vec(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> std::result::Result<Vec<u8>, FormatError> {
    let h = header(bytes, LABELS_MAGIC, 2)?;
    let count = h[0] as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Pair decoded images with labels, scaling pixels by 1/255.
pub fn decode(images: &IdxImages, labels: &[u8]) -> std::result::Result<Vec<Example>, FormatError> {
    if images.count != labels.len() {
        return Err(FormatError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let dim = images.rows * images.cols;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let input = images.pixels[i * dim..(i + 1) * dim]
                .iter()
                .map(|&p| f64::from(p) / 255.0)
                .collect();
            Example::new(input, usize::from(label))
        })
        .collect())
}

/// Load an image file and its label file into a dataset.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let fmt = |path: &Path| {
        let path = path.to_path_buf();
        move |kind| Error::Format { path, kind }
    };
    let images = parse_images(&std::fs::read(images_path)?).map_err(fmt(images_path))?;
    let labels = parse_labels(&std::fs::read(labels_path)?).map_err(fmt(labels_path))?;
    let examples = decode(&images, &labels).map_err(fmt(labels_path))?;
    Dataset::new(examples)
}

/// Encode an image file. Used by tests and fixtures.
pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
