use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotKind {
    Weight,
    Bias,
}

/// One named tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub name: String,
    pub kind: SlotKind,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Slot {
    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered, contiguous description of a parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    slots: Vec<Slot>,
    len: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a weight matrix of shape `rows × cols`.
    pub fn weight(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> &mut Self {
        self.push(name.into(), SlotKind::Weight, rows, cols)
    }

    /// Appends a bias vector stored as a `1 × len` row.
    pub fn bias(&mut self, name: impl Into<String>, len: usize) -> &mut Self {
        self.push(name.into(), SlotKind::Bias, 1, len)
    }

    fn push(&mut self, name: String, kind: SlotKind, rows: usize, cols: usize) -> &mut Self {
        debug_assert!(self.index_of(&name).is_none(), "duplicate slot {name}");
        let offset = self.len;
        self.len += rows * cols;
        self.slots.push(Slot {
            name,
            kind,
            rows,
            cols,
            offset,
        });
        self
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.slots.iter().position(|s| s.name == name)
    }

    pub fn slot(&self, name: &str) -> Result<&Slot> {
        self.slots
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::config(format!("no parameter slot named {name:?}")))
    }

    /// Checks that offsets are contiguous, non-overlapping and cover `len`.
    pub fn validate(&self) -> Result<()> {
        let mut cursor = 0;
        for s in &self.slots {
            if s.offset != cursor {
                return Err(Error::config(format!(
                    "slot {} starts at {}, expected {cursor}",
                    s.name, s.offset
                )));
            }
            cursor += s.len();
        }
        if cursor != self.len {
            return Err(Error::config(format!(
                "slots cover {cursor} values, layout declares {}",
                self.len
            )));
        }
        Ok(())
    }
}

/// Flat parameters in a canonical layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    layout: Layout,
    data: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        let data = vec![0.0; layout.len()];
        Self { layout, data }
    }

    pub fn from_data(layout: Layout, data: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        if data.len() != layout.len() {
            return Err(Error::config(format!(
                "parameter vector has {} values, layout needs {}",
                data.len(),
                layout.len()
            )));
        }
        Ok(Self { layout, data })
    }

    /// Weights ~ U(−√(1/fan_in), +√(1/fan_in)) with fan_in = cols; biases zero.
    pub fn init_uniform(layout: Layout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(layout);
        for slot in p.layout.slots.clone() {
            if slot.kind == SlotKind::Weight && slot.cols > 0 {
                let bound = (1.0 / slot.cols as f64).sqrt();
                for v in &mut p.data[slot.range()] {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        p
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn slice(&self, name: &str) -> Result<&[f64]> {
        let r = self.layout.slot(name)?.range();
        Ok(&self.data[r])
    }

    pub fn slice_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let r = self.layout.slot(name)?.range();
        Ok(&mut self.data[r])
    }

    /// Copies one slot out as a matrix.
    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let s = self.layout.slot(name)?;
        Matrix::from_vec(s.rows, s.cols, self.data[s.range()].to_vec())
    }

    /// Splits into named matrices in layout order.
    pub fn unflatten(&self) -> Vec<(String, Matrix)> {
        self.layout
            .slots
            .iter()
            .map(|s| {
                let m = Matrix::from_vec(s.rows, s.cols, self.data[s.range()].to_vec())
                    .expect("slot shape matches range");
                (s.name.clone(), m)
            })
            .collect()
    }

    /// Inverse of [`ParamVector::unflatten`].
    pub fn flatten(layout: Layout, tensors: &[(String, Matrix)]) -> Result<Self> {
        if tensors.len() != layout.slots.len() {
            return Err(Error::config(format!(
                "expected {} tensors, got {}",
                layout.slots.len(),
                tensors.len()
            )));
        }
        let mut data = Vec::with_capacity(layout.len());
        for (slot, (name, m)) in layout.slots.iter().zip(tensors) {
            if &slot.name != name || m.shape() != (slot.rows, slot.cols) {
                return Err(Error::config(format!(
                    "tensor {name} {:?} does not match slot {} {}x{}",
                    m.shape(),
                    slot.name,
                    slot.rows,
                    slot.cols
                )));
            }
            data.extend_from_slice(m.as_slice());
        }
        Self::from_data(layout, data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_layout() -> Layout {
        let mut l = Layout::new();
        l.weight("W", 3, 4).bias("b", 3).weight("V", 2, 3).bias("c", 2);
        l
    }

    #[test]
    fn offsets_are_contiguous() {
        let l = toy_layout();
        l.validate().unwrap();
        assert_eq!(l.len(), 12 + 3 + 6 + 2);
        assert_eq!(l.slot("V").unwrap().offset, 15);
    }

    #[test]
    fn init_bounds_and_zero_biases() {
        let p = ParamVector::init_uniform(toy_layout(), 7);
        let bound = (1.0f64 / 4.0).sqrt();
        assert!(p.slice("W").unwrap().iter().all(|v| v.abs() <= bound));
        assert!(p.slice("b").unwrap().iter().all(|&v| v == 0.0));
        assert!(p.slice("c").unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(p, ParamVector::init_uniform(toy_layout(), 7));
        assert_ne!(p, ParamVector::init_uniform(toy_layout(), 8));
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(ParamVector::from_data(toy_layout(), vec![0.0; 3]).is_err());
    }

    proptest! {
        #[test]
        fn flatten_unflatten_is_identity(values in proptest::collection::vec(-1e6f64..1e6, 23)) {
            let p = ParamVector::from_data(toy_layout(), values).unwrap();
            let back = ParamVector::flatten(toy_layout(), &p.unflatten()).unwrap();
            prop_assert_eq!(
                back.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                p.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
