//! Flat parameter vectors with a named segment layout.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};

/// One named slice of a parameter vector, e.g. the weights of layer 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub range: Range<usize>,
}

/// Ordered, disjoint segments covering `0..len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    segments: Arc<[Segment]>,
    len: usize,
}

impl Layout {
    /// Build a layout from `(name, length)` pairs laid out back to back.
    pub fn from_sizes<'a>(sizes: impl IntoIterator<Item = (&'a str, usize)>) -> Self {
        let mut start = 0;
        let segments: Vec<Segment> = sizes
            .into_iter()
            .map(|(name, n)| {
                let seg = Segment {
                    name: name.to_string(),
                    range: start..start + n,
                };
                start += n;
                seg
            })
            .collect();
        Self {
            segments: segments.into(),
            len: start,
        }
    }

    /// Single-segment layout.
    pub fn flat(name: &str, len: usize) -> Self {
        Self::from_sizes([(name, len)])
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<Range<usize>> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| s.range.clone())
    }
}

/// Model weights or an update delta.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: layout.len(),
                found: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    /// Convenience for tests and small examples: a single-segment vector.
    pub fn from_slice(values: &[f64]) -> Self {
        Self {
            layout: Layout::flat("values", values.len()),
            values: values.to_vec(),
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|r| &self.values[r])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.layout.segment(name).map(move |r| &mut self.values[r])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_layout(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch);
        }
        Ok(())
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: f64, other: &Self) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_layout(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }
}
