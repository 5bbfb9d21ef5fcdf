//! Compact dataset cache.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FELD" | version: u8 = 1 | count: u32 | dim: u32 | num_classes: u32
//!        | count * dim features as f32 | count labels as u16
//! ```
//!
//! Features are stored in single precision, so a round trip reproduces
//! `f64::from(x as f32)` rather than `x`.

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::learner::{Dataset, Example};

pub const CACHE_MAGIC: [u8; 4] = *b"FELD";
pub const CACHE_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 4;

fn encode(data: &Dataset) -> Vec<u8> {
    let (n, d) = (data.len(), data.dim());
    let mut out = Vec::with_capacity(HEADER_LEN + n * d * 4 + n * 2);
    out.extend_from_slice(&CACHE_MAGIC);
    out.push(CACHE_VERSION);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(data.num_classes() as u32).to_le_bytes());
    for e in data.examples() {
        for x in &e.input {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    for e in data.examples() {
        out.extend_from_slice(&(e.label as u16).to_le_bytes());
    }
    out
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn decode(bytes: &[u8]) -> std::result::Result<Vec<Example>, FormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..4] != CACHE_MAGIC {
        return Err(FormatError::WrongMagic {
            expected: u32::from_be_bytes(CACHE_MAGIC),
            found: u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
        });
    }
    if bytes[4] != CACHE_VERSION {
        return Err(FormatError::UnsupportedVersion(bytes[4]));
    }
    let n = le_u32(&bytes[5..9]) as usize;
    let d = le_u32(&bytes[9..13]) as usize;
    let expected = HEADER_LEN + n * d * 4 + n * 2;
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let features = &bytes[HEADER_LEN..HEADER_LEN + n * d * 4];
    let labels = &bytes[HEADER_LEN + n * d * 4..expected];
    Ok((0..n)
        .map(|i| {
            let input = features[i * d * 4..(i + 1) * d * 4]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            let label = u16::from_le_bytes([labels[2 * i], labels[2 * i + 1]]);
            Example::new(input, usize::from(label))
        })
        .collect())
}

pub fn write_cache(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(data))?;
    Ok(())
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let examples = decode(&bytes).map_err(|kind| Error::Format {
        path: path.to_path_buf(),
        kind,
    })?;
    Dataset::new(examples)
}
