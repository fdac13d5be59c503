//! Error metrics, correlation of plane-averaged quantities, slices and the
//! embedding-dimension study.

mod embedding;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use embedding::{embedding_study, EmbeddingResult, StudyBudget};

use crate::data::{write_table, Configuration, Normalizer, FEATURE_NAMES};
use crate::error::{Error, Result};
use crate::geometry::SurfaceMesh;
use crate::hypernet::HyperModel;
use crate::model::BackboneModel;
use crate::oracle::{self, OracleParams, Qoi, QOI_NAMES};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mae_per_feature: Vec<f64>,
    pub mse: f64,
    pub mse_per_feature: Vec<f64>,
}

pub fn metrics(pred: &Matrix, target: &Matrix) -> Result<Metrics> {
    if pred.shape() != target.shape() {
        return Err(Error::config(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.rows() == 0 || pred.cols() == 0 {
        return Err(Error::input("metrics of an empty set"));
    }
    let c = pred.cols();
    let mut abs = vec![0.0; c];
    let mut sq = vec![0.0; c];
    for (p, t) in pred.row_iter().zip(target.row_iter()) {
        for j in 0..c {
            let d = p[j] - t[j];
            abs[j] += d.abs();
            sq[j] += d * d;
        }
    }
    let n = pred.rows() as f64;
    let mae_per_feature: Vec<f64> = abs.iter().map(|s| s / n).collect();
    let mse_per_feature: Vec<f64> = sq.iter().map(|s| s / n).collect();
    Ok(Metrics {
        mae: abs.iter().sum::<f64>() / (n * c as f64),
        mse: sq.iter().sum::<f64>() / (n * c as f64),
        mae_per_feature,
        mse_per_feature,
    })
}

/// Pearson product-moment correlation.
pub fn pearson_r(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::config(format!("series lengths {} and {}", u.len(), v.len())));
    }
    if u.len() < 2 {
        return Err(Error::input("correlation needs at least two samples"));
    }
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (da, db) = (a - mu, b - mv);
        suv += da * db;
        suu += da * da;
        svv += db * db;
    }
    if suu == 0.0 || svv == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((suv / (suu.sqrt() * svv.sqrt())).clamp(-1.0, 1.0))
}

/// A field that can be sampled at physical coordinates.
pub trait FieldSource {
    fn features(&self, coords: &Matrix) -> Result<Matrix>;

    fn is_inside(&self, _p: [f64; 3]) -> bool {
        false
    }
}

/// The analytic field; interior nodes report zeros.
impl FieldSource for OracleParams {
    fn features(&self, coords: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(coords.rows(), 5);
        for r in 0..coords.rows() {
            let c = coords.row(r);
            if let Some(f) = oracle::evaluate(self, [c[0], c[1], c[2]])? {
                out.row_mut(r).copy_from_slice(&f);
            }
        }
        Ok(out)
    }

    fn is_inside(&self, p: [f64; 3]) -> bool {
        OracleParams::is_inside(self, p)
    }
}

impl FieldSource for BackboneModel {
    fn features(&self, coords: &Matrix) -> Result<Matrix> {
        self.predict(coords)
    }
}

/// A hyper model conditioned on one mesh given in its original frame.
pub struct Conditioned<'a> {
    pub model: &'a HyperModel,
    pub mesh: &'a SurfaceMesh,
}

impl FieldSource for Conditioned<'_> {
    fn features(&self, coords: &Matrix) -> Result<Matrix> {
        self.model.predict_recentered(self.mesh, coords)
    }
}

/// Borrows `field` for values and `mask` for the obstacle interior.
pub struct Masked<'a, F: ?Sized> {
    pub field: &'a F,
    pub mask: &'a OracleParams,
}

impl<F: FieldSource + ?Sized> FieldSource for Masked<'_, F> {
    fn features(&self, coords: &Matrix) -> Result<Matrix> {
        self.field.features(coords)
    }

    fn is_inside(&self, p: [f64; 3]) -> bool {
        self.mask.is_inside(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::config(format!("unknown axis {other:?}"))),
        }
    }
}

/// A constant-coordinate plane in normalized units, sampled on an `n_u × n_v` grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub axis: Axis,
    pub value: f64,
    pub grid: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    /// Normalized in-plane coordinates per node.
    pub uv: Matrix,
    /// Physical coordinates per node.
    pub coords: Matrix,
    pub features: Matrix,
    pub inside: Vec<bool>,
}

pub const SLICE_HEADER: [&str; 11] = ["u", "v", "x", "y", "z", "rho", "p", "vx", "vy", "vz", "inside"];

impl Slice {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let flags = Matrix::from_vec(
            self.inside.len(),
            1,
            self.inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )?;
        write_table(w, &SLICE_HEADER, &[&self.uv, &self.coords, &self.features, &flags])
    }

    /// MAE over exterior nodes against another slice of the same grid, normalized by `feature_norm`.
    pub fn normalized_mae(&self, other: &Slice, feature_norm: &Normalizer) -> Result<f64> {
        let keep: Vec<usize> = (0..self.inside.len()).filter(|&i| !self.inside[i] && !other.inside[i]).collect();
        if keep.is_empty() {
            return Err(Error::input("slices share no exterior nodes"));
        }
        let a = feature_norm.normalize(&self.features.select_rows(&keep))?;
        let b = feature_norm.normalize(&other.features.select_rows(&keep))?;
        crate::train::mae_loss(&a, &b)
    }
}

/// Evaluates `source` on the plane `spec`; `coord_norm` maps the grid to physical units.
/// Interior nodes keep their coordinates and carry zero features.
pub fn extract_slice<S: FieldSource + ?Sized>(source: &S, spec: &SliceSpec, coord_norm: &Normalizer) -> Result<Slice> {
    let (nu, nv) = spec.grid;
    if nu < 2 || nv < 2 {
        return Err(Error::config(format!("slice grid {nu}×{nv} is smaller than 2×2")));
    }
    if !spec.value.is_finite() {
        return Err(Error::config("slice position must be finite"));
    }
    if coord_norm.channels() != 3 {
        return Err(Error::config("slice needs a 3-channel coordinate normalizer"));
    }
    let a = spec.axis.index();
    let (iu, iv) = match spec.axis {
        Axis::X => (1, 2),
        Axis::Y => (0, 2),
        Axis::Z => (0, 1),
    };
    let n = nu * nv;
    let mut uv = Vec::with_capacity(2 * n);
    let mut coords = Vec::with_capacity(3 * n);
    for i in 0..nu {
        let u = -1.0 + 2.0 * i as f64 / (nu - 1) as f64;
        for j in 0..nv {
            let v = -1.0 + 2.0 * j as f64 / (nv - 1) as f64;
            let mut p = [0.0; 3];
            p[a] = coord_norm.denormalize_value(a, spec.value);
            p[iu] = coord_norm.denormalize_value(iu, u);
            p[iv] = coord_norm.denormalize_value(iv, v);
            uv.extend_from_slice(&[u, v]);
            coords.extend_from_slice(&p);
        }
    }
    let uv = Matrix::from_vec(n, 2, uv)?;
    let coords = Matrix::from_vec(n, 3, coords)?;
    let inside: Vec<bool> = coords.row_iter().map(|c| source.is_inside([c[0], c[1], c[2]])).collect();
    let outside: Vec<usize> = (0..n).filter(|&i| !inside[i]).collect();
    if outside.is_empty() {
        return Err(Error::input("slice lies entirely inside the obstacle"));
    }
    let values = source.features(&coords.select_rows(&outside))?;
    let mut features = Matrix::zeros(n, FEATURE_NAMES.len());
    for (k, &i) in outside.iter().enumerate() {
        features.row_mut(i).copy_from_slice(values.row(k));
    }
    Ok(Slice { uv, coords, features, inside })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub config_id: String,
    pub qoi: String,
    pub truth: f64,
    pub pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub rows: Vec<CorrelationRow>,
    /// Pearson r per quantity, in [`QOI_NAMES`] order.
    pub r: Vec<(String, f64)>,
}

impl CorrelationReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "config_id,qoi,true,pred")?;
        for row in &self.rows {
            writeln!(w, "{},{},{},{}", row.config_id, row.qoi, row.truth, row.pred)?;
        }
        Ok(())
    }
}

/// Plane quantities at `x = x_out` (an `n × n` grid) from `predict` and from the exact
/// field of each configuration, and their correlation across configurations.
pub fn correlation_report<P>(predict: P, configs: &[Configuration], x_out: f64, n: usize) -> Result<CorrelationReport>
where
    P: Fn(&Configuration, &Matrix) -> Result<Matrix>,
{
    if configs.len() < 2 {
        return Err(Error::input("correlation needs at least two configurations"));
    }
    let mut rows = Vec::new();
    let mut truth: Vec<Qoi> = Vec::with_capacity(configs.len());
    let mut pred: Vec<Qoi> = Vec::with_capacity(configs.len());
    for c in configs {
        let theta = c
            .theta
            .ok_or_else(|| Error::input(format!("configuration {} has no exact field", c.id)))?;
        let (grid, mask, exact) = oracle::plane_samples(&theta, x_out, n)?;
        let keep: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        let predicted = predict(c, &grid.select_rows(&keep))?;
        let qt = oracle::qoi_from_features(&exact, &mask)?;
        let qp = oracle::qoi_from_features(&predicted, &vec![true; keep.len()])?;
        for (k, name) in QOI_NAMES.iter().enumerate() {
            rows.push(CorrelationRow {
                config_id: c.id.clone(),
                qoi: (*name).into(),
                truth: qt.values()[k],
                pred: qp.values()[k],
            });
        }
        truth.push(qt);
        pred.push(qp);
    }
    let mut r = Vec::with_capacity(QOI_NAMES.len());
    for (k, name) in QOI_NAMES.iter().enumerate() {
        let t: Vec<f64> = truth.iter().map(|q| q.values()[k]).collect();
        let p: Vec<f64> = pred.iter().map(|q| q.values()[k]).collect();
        r.push(((*name).to_string(), pearson_r(&t, &p)?));
    }
    Ok(CorrelationReport { rows, r })
}

/// [`correlation_report`] for a trained hyper model.
pub fn hyper_correlation_report(model: &HyperModel, configs: &[Configuration], x_out: f64, n: usize) -> Result<CorrelationReport> {
    correlation_report(|c, x| model.predict_recentered(&c.mesh, x), configs, x_out, n)
}
