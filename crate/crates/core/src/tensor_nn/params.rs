//! Flat parameter storage with a named segment layout.

use std::sync::Arc;

use crate::error::{ensure_len, Error, Result};

/// One named block of a [`ParameterVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered segment list plus precomputed offsets. Shared between a parameter
/// vector and every gradient derived from it.
#[derive(Debug, PartialEq, Eq)]
pub struct Layout {
    segments: Vec<Segment>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(segments.len());
        let mut total = 0;
        for (i, seg) in segments.iter().enumerate() {
            if segments[..i].iter().any(|s| s.name == seg.name) {
                return Err(Error::Config(format!("duplicate segment name `{}`", seg.name)));
            }
            offsets.push(total);
            total += seg.size();
        }
        Ok(Self {
            segments,
            offsets,
            total,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Range of flat indices occupied by the named segment.
    pub fn range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        self.segments
            .iter()
            .position(|s| s.name == name)
            .map(|i| self.offsets[i]..self.offsets[i] + self.segments[i].size())
    }

    /// Name of the segment holding flat index `index`.
    pub fn segment_of(&self, index: usize) -> Option<&Segment> {
        if index >= self.total {
            return None;
        }
        let i = self.offsets.partition_point(|&o| o <= index) - 1;
        Some(&self.segments[i])
    }

    fn ranges(&self) -> impl Iterator<Item = (&Segment, std::ops::Range<usize>)> {
        self.segments
            .iter()
            .zip(&self.offsets)
            .map(|(s, &o)| (s, o..o + s.size()))
    }
}

/// Real-valued parameters (or gradients) laid out as named segments.
#[derive(Debug, Clone)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl PartialEq for ParameterVector {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.values == other.values
    }
}

impl ParameterVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    /// Rebuilds a vector from flat values; the inverse of [`ParameterVector::flatten`].
    pub fn unflatten(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        ensure_len("parameter values", layout.len(), values.len())?;
        Ok(Self { values, layout })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
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

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.range(name).map(|r| &self.values[r])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.layout.range(name).map(move |r| &mut self.values[r])
    }

    /// Iterates `(segment, values)` in layout order.
    pub fn segments(&self) -> impl Iterator<Item = (&Segment, &[f64])> {
        self.layout.ranges().map(|(s, r)| (s, &self.values[r]))
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        ensure_len("axpy operand", self.len(), other.len())?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Name of the first segment containing a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .and_then(|i| self.layout.segment_of(i))
            .map(|s| s.name.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> Arc<Layout> {
        Arc::new(
            Layout::new(vec![
                Segment::new("w", vec![2, 3]),
                Segment::new("b", vec![2]),
            ])
            .unwrap(),
        )
    }

    #[test]
    fn total_length_is_sum_of_segments() {
        let l = layout();
        assert_eq!(l.len(), 8);
        assert_eq!(l.range("b"), Some(6..8));
        assert_eq!(l.segment_of(5).unwrap().name, "w");
        assert_eq!(l.segment_of(6).unwrap().name, "b");
        assert!(l.segment_of(8).is_none());
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        assert!(ParameterVector::unflatten(layout(), vec![0.0; 7]).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = Layout::new(vec![Segment::new("a", vec![1]), Segment::new("a", vec![2])]);
        assert!(r.is_err());
    }

    #[test]
    fn non_finite_is_attributed_to_segment() {
        let mut p = ParameterVector::zeros(layout());
        p.values_mut()[7] = f64::NAN;
        assert_eq!(p.first_non_finite(), Some("b"));
    }
}
