//! Deterministic on-axis Fourier features.
//!
//! For each input component `x_i` and level `l` the encoder emits
//! `sin(f_l x_i), cos(f_l x_i)` with `f_l = 2π·2^l·f_b`, component-major and
//! level-minor, followed by the raw coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionalEncoder {
    pub base_frequency: f64,
    pub levels: usize,
    pub input_dim: usize,
}

impl Default for PositionalEncoder {
    fn default() -> Self {
        Self {
            base_frequency: 0.5,
            levels: 4,
            input_dim: 3,
        }
    }
}

impl PositionalEncoder {
    pub fn new(base_frequency: f64, levels: usize, input_dim: usize) -> Result<Self> {
        let enc = Self {
            base_frequency,
            levels,
            input_dim,
        };
        enc.validate()?;
        Ok(enc)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_frequency > 0.0 && self.base_frequency.is_finite()) {
            return Err(Error::config(format!(
                "base frequency must be positive, got {}",
                self.base_frequency
            )));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.levels)
            .map(|l| 2.0 * std::f64::consts::PI * 2f64.powi(l as i32) * self.base_frequency)
            .collect()
    }

    /// Number of Fourier features, `2·L·D_x`.
    pub fn feature_dim(&self) -> usize {
        2 * self.levels * self.input_dim
    }

    /// Fourier features plus the raw coordinates.
    pub fn output_dim(&self) -> usize {
        self.feature_dim() + self.input_dim
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::config(format!(
                "encoder expects {} coordinates, got {}",
                self.input_dim,
                x.len()
            )));
        }
        let mut out = Vec::with_capacity(self.output_dim());
        self.encode_into(&self.frequencies(), x, &mut out);
        Ok(out)
    }

    fn encode_into(&self, freqs: &[f64], x: &[f64], out: &mut Vec<f64>) {
        for &xi in x {
            for &f in freqs {
                let (s, c) = (f * xi).sin_cos();
                out.push(s);
                out.push(c);
            }
        }
        out.extend_from_slice(x);
    }

    /// Row-wise encoding of an `N × D_x` matrix.
    pub fn encode_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim {
            return Err(Error::config(format!(
                "encoder expects {} coordinates, got {}",
                self.input_dim,
                x.cols()
            )));
        }
        let freqs = self.frequencies();
        let mut data = Vec::with_capacity(x.rows() * self.output_dim());
        for row in x.row_iter() {
            self.encode_into(&freqs, row, &mut data);
        }
        Matrix::from_vec(x.rows(), self.output_dim(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn default_frequencies() {
        let f = PositionalEncoder::default().frequencies();
        let want = [PI, 2.0 * PI, 4.0 * PI, 8.0 * PI];
        for (a, b) in f.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_level_unit_base() {
        let enc = PositionalEncoder::new(1.0, 1, 3).unwrap();
        assert_eq!(enc.frequencies(), vec![2.0 * PI]);
    }

    #[test]
    fn zero_levels_passes_through() {
        let enc = PositionalEncoder::new(0.5, 0, 3).unwrap();
        assert!(enc.frequencies().is_empty());
        let x = [0.3, -0.9, 0.25];
        assert_eq!(enc.encode(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn origin_encoding_alternates() {
        let enc = PositionalEncoder::default();
        let out = enc.encode(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(out.len(), 27);
        for pair in out[..24].chunks(2) {
            assert_eq!(pair, &[0.0, 1.0]);
        }
        assert_eq!(&out[24..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn first_pair_at_unit_x() {
        let enc = PositionalEncoder::new(0.5, 1, 3).unwrap();
        let out = enc.encode(&[1.0, 0.0, 0.0]).unwrap();
        assert!(out[0].abs() < 1e-15);
        assert!((out[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn wrong_dimension_rejected() {
        let enc = PositionalEncoder::default();
        assert!(matches!(enc.encode(&[0.0, 1.0]), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_nonpositive_base() {
        assert!(PositionalEncoder::new(0.0, 4, 3).is_err());
    }

    #[test]
    fn batch_matches_single() {
        let enc = PositionalEncoder::default();
        let x = Matrix::from_rows(&[[0.1, 0.2, -0.3], [0.9, -1.0, 0.0]]).unwrap();
        let b = enc.encode_batch(&x).unwrap();
        for r in 0..2 {
            assert_eq!(b.row(r), enc.encode(x.row(r)).unwrap().as_slice());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn length_and_unit_circle(x in proptest::array::uniform3(-1.0f64..1.0), levels in 0usize..7) {
                let enc = PositionalEncoder::new(0.5, levels, 3).unwrap();
                let out = enc.encode(&x).unwrap();
                prop_assert_eq!(out.len(), 2 * levels * 3 + 3);
                for pair in out[..2 * levels * 3].chunks(2) {
                    prop_assert!((pair[0] * pair[0] + pair[1] * pair[1] - 1.0).abs() < 1e-12);
                }
                let again = enc.encode(&x).unwrap();
                prop_assert_eq!(
                    out.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    again.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                );
            }
        }
    }
}
