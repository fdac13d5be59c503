use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::SurfaceMesh;
use crate::oracle::OracleParams;
use crate::tensor::Matrix;

/// Feature channel order.
pub const FEATURE_NAMES: [&str; 5] = ["rho", "p", "vx", "vy", "vz"];
pub const VY: usize = 3;
pub const VZ: usize = 4;

/// Coordinate → feature samples from one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDataset {
    pub coords: Matrix,
    pub features: Matrix,
}

impl FieldDataset {
    pub fn new(coords: Matrix, features: Matrix) -> Result<Self> {
        if coords.rows() != features.rows() {
            return Err(Error::input(format!(
                "{} coordinate rows vs {} feature rows",
                coords.rows(),
                features.rows()
            )));
        }
        if !coords.is_finite() || !features.is_finite() {
            return Err(Error::input("dataset contains non-finite values"));
        }
        Ok(Self { coords, features })
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> FieldDataset {
        FieldDataset {
            coords: self.coords.select_rows(idx),
            features: self.features.select_rows(idx),
        }
    }

    /// Seeded shuffle, then contiguous parts sized by `fractions`.
    pub fn split(&self, fractions: &[f64], seed: u64) -> Result<Vec<FieldDataset>> {
        Ok(split_indices(self.len(), fractions, seed)?
            .iter()
            .map(|idx| self.select(idx))
            .collect())
    }

    /// Uniform sample without replacement of `round(fraction·N)` rows.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<FieldDataset> {
        let (keep, _) = subsample_indices(self.len(), fraction, seed)?;
        Ok(self.select(&keep))
    }
}

/// Partition sizes: `round(f_i·n)` for all but the last part, which takes the rest.
pub fn split_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::config(format!("invalid split fractions {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }
    let mut sizes = Vec::with_capacity(fractions.len());
    let mut used = 0usize;
    for f in &fractions[..fractions.len() - 1] {
        let s = ((f * n as f64).round() as usize).min(n - used);
        sizes.push(s);
        used += s;
    }
    sizes.push(n - used);
    Ok(sizes)
}

/// Index partition for [`FieldDataset::split`]; empty parts are allowed.
pub fn split_indices(n: usize, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let sizes = split_sizes(n, fractions)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        parts.push(idx[start..start + s].to_vec());
        start += s;
    }
    Ok(parts)
}

/// Returns `(kept, complement)` index sets.
pub fn subsample_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!(
            "subsample fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::input(format!(
            "subsampling {n} rows at {fraction} leaves nothing"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let rest = idx.split_off(k);
    Ok((idx, rest))
}

/// One geometry with its volumetric field.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub id: String,
    pub mesh: SurfaceMesh,
    pub field: FieldDataset,
    /// Generating parameters when the configuration comes from the analytic oracle.
    pub theta: Option<OracleParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigurationSet {
    pub configs: Vec<Configuration>,
}

impl ConfigurationSet {
    pub fn new(configs: Vec<Configuration>) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::input("configuration set is empty"));
        }
        for c in &configs {
            if c.field.is_empty() {
                return Err(Error::input(format!("configuration {} has no points", c.id)));
            }
            if c.mesh.vertices.is_empty() {
                return Err(Error::input(format!("configuration {} has an empty mesh", c.id)));
            }
        }
        Ok(Self { configs })
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    /// Splits over configurations (not points).
    pub fn split(&self, fractions: &[f64], seed: u64) -> Result<Vec<Vec<Configuration>>> {
        Ok(split_indices(self.len(), fractions, seed)?
            .into_iter()
            .map(|idx| idx.into_iter().map(|i| self.configs[i].clone()).collect())
            .collect())
    }
}
