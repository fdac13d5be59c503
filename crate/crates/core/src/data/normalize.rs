use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Per-channel affine map `[min, max] → [−1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() {
            return Err(Error::config(format!(
                "normalizer has {} minima and {} maxima",
                min.len(),
                max.len()
            )));
        }
        for (channel, (lo, hi)) in min.iter().zip(&max).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::config(format!("channel {channel} has non-finite range")));
            }
            if hi <= lo {
                return Err(Error::DegenerateChannel { channel, value: *lo });
            }
        }
        Ok(Self { min, max })
    }

    /// Channel-wise extremes of `rows`. Pass training rows only.
    pub fn fit(rows: &Matrix) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::input("cannot fit a normalizer on zero rows"));
        }
        let mut min = rows.row(0).to_vec();
        let mut max = min.clone();
        for row in rows.row_iter().skip(1) {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Self::new(min, max)
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    #[inline]
    pub fn normalize_value(&self, channel: usize, v: f64) -> f64 {
        2.0 * (v - self.min[channel]) / (self.max[channel] - self.min[channel]) - 1.0
    }

    #[inline]
    pub fn denormalize_value(&self, channel: usize, v: f64) -> f64 {
        (v + 1.0) * 0.5 * (self.max[channel] - self.min[channel]) + self.min[channel]
    }

    fn check(&self, rows: &Matrix) -> Result<()> {
        if rows.cols() != self.channels() {
            return Err(Error::config(format!(
                "normalizer has {} channels, data has {}",
                self.channels(),
                rows.cols()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, rows: &Matrix) -> Result<Matrix> {
        self.check(rows)?;
        let mut out = rows.clone();
        let c = self.channels();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            *v = self.normalize_value(i % c, *v);
        }
        Ok(out)
    }

    pub fn denormalize(&self, rows: &Matrix) -> Result<Matrix> {
        self.check(rows)?;
        let mut out = rows.clone();
        let c = self.channels();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            *v = self.denormalize_value(i % c, *v);
        }
        Ok(out)
    }

    /// Normalizes each point of a 3-column point list.
    pub fn normalize_points(&self, points: &[[f64; 3]]) -> Result<Matrix> {
        let m = Matrix::from_vec(points.len(), 3, points.iter().flatten().copied().collect())?;
        self.normalize(&m)
    }
}
