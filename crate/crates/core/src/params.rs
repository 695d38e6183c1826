use std::ops::Range;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// A named, shaped slice of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter store with a named-layer layout.
///
/// Segments are laid out back to back in insertion order, so they never
/// overlap and always cover `data` exactly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector {
    segments: Vec<Segment>,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a vector from a segment table and payload, validating the layout.
    pub fn from_parts(segments: Vec<Segment>, data: Vec<f64>) -> Result<Self> {
        let mut expected = 0;
        for (i, s) in segments.iter().enumerate() {
            if s.offset != expected {
                return Err(Error::dim(format!(
                    "segment {} starts at {}, expected {expected}",
                    s.name, s.offset
                )));
            }
            if segments[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::contract(format!("duplicate segment name {}", s.name)));
            }
            expected += s.len();
        }
        if expected != data.len() {
            return Err(Error::dim(format!(
                "segments cover {expected} values, payload has {}",
                data.len()
            )));
        }
        Ok(Self { segments, data })
    }

    pub fn push(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) -> Result<()> {
        if self.segment(name).is_some() {
            return Err(Error::contract(format!("segment {name} already present")));
        }
        if values.len() != rows * cols {
            return Err(Error::dim(format!(
                "segment {name} is {rows}x{cols} but got {} values",
                values.len()
            )));
        }
        self.segments.push(Segment {
            name: name.to_string(),
            rows,
            cols,
            offset: self.data.len(),
        });
        self.data.extend(values);
        Ok(())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn has(&self, name: &str) -> bool {
        self.segment(name).is_some()
    }

    fn require(&self, name: &str) -> Result<&Segment> {
        self.segment(name)
            .ok_or_else(|| Error::contract(format!("no segment named {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        let r = self.require(name)?.range();
        Ok(&self.data[r])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let r = self.require(name)?.range();
        Ok(&mut self.data[r])
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let s = self.require(name)?;
        Matrix::from_vec(s.rows, s.cols, self.data[s.range()].to_vec())
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            segments: self.segments.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.segments == other.segments
    }

    /// Copy of `self` with the named segments removed and offsets repacked.
    pub fn without(&self, names: &[&str]) -> Self {
        let mut out = ParamVector::new();
        for s in &self.segments {
            if !names.contains(&s.name.as_str()) {
                out.push(&s.name, s.rows, s.cols, self.data[s.range()].to_vec())
                    .expect("source layout is valid");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let mut p = ParamVector::new();
        p.push("a", 2, 3, vec![1.0; 6]).unwrap();
        p.push("b", 1, 3, vec![2.0; 3]).unwrap();
        assert_eq!(p.segment("b").unwrap().offset, 6);
        assert_eq!(p.len(), 9);
        assert!(p.push("a", 1, 1, vec![0.0]).is_err());
        assert!(p.push("c", 2, 2, vec![0.0]).is_err());
        let q = p.without(&["a"]);
        assert_eq!(q.segment("b").unwrap().offset, 0);
        assert_eq!(q.get("b").unwrap(), &[2.0; 3]);
    }

    #[test]
    fn from_parts_validates() {
        let seg = |name: &str, offset| Segment {
            name: name.into(),
            rows: 1,
            cols: 2,
            offset,
        };
        assert!(ParamVector::from_parts(vec![seg("a", 0), seg("b", 2)], vec![0.0; 4]).is_ok());
        assert!(ParamVector::from_parts(vec![seg("a", 0), seg("b", 3)], vec![0.0; 5]).is_err());
        assert!(ParamVector::from_parts(vec![seg("a", 0), seg("a", 2)], vec![0.0; 4]).is_err());
        assert!(ParamVector::from_parts(vec![seg("a", 0)], vec![0.0; 3]).is_err());
    }
}
