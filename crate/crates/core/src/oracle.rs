//! Analytic flow around a cylinder in the box `[−1,1]² × [0,1]`.
//!
//! Potential flow past a cylinder of radius `a` centred at `(0, c_y)`, damped by a
//! wall layer of thickness 0.05, with a weak spanwise velocity and a tanh front at
//! `x = x_s` standing in for a shock.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FieldDataset, Normalizer};
use crate::error::{Error, Result};
use crate::geometry::SurfaceMesh;
use crate::tensor::Matrix;

pub const RADIUS_RANGE: (f64, f64) = (0.1, 0.3);
pub const OFFSET_RANGE: (f64, f64) = (-0.2, 0.2);
pub const STEEPNESS_RANGE: (f64, f64) = (5.0, 25.0);
pub const SHOCK_RANGE: (f64, f64) = (0.3, 0.7);
pub const BOX_MIN: [f64; 3] = [-1.0, -1.0, 0.0];
pub const BOX_MAX: [f64; 3] = [1.0, 1.0, 1.0];

const WALL_LAYER: f64 = 0.05;
const FREESTREAM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub a: f64,
    pub c_y: f64,
    pub s: f64,
    pub x_s: f64,
}

fn check_range(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo..=hi).contains(&v) {
        return Err(Error::config(format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

impl OracleParams {
    pub fn new(a: f64, c_y: f64, s: f64, x_s: f64) -> Result<Self> {
        let p = Self { a, c_y, s, x_s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_range("a", self.a, RADIUS_RANGE)?;
        check_range("c_y", self.c_y, OFFSET_RANGE)?;
        check_range("s", self.s, STEEPNESS_RANGE)?;
        check_range("x_s", self.x_s, SHOCK_RANGE)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.a, self.c_y, self.s, self.x_s]
    }

    /// Distance from the cylinder axis.
    #[inline]
    pub fn axis_distance(&self, p: [f64; 3]) -> f64 {
        p[0].hypot(p[1] - self.c_y)
    }

    pub fn is_inside(&self, p: [f64; 3]) -> bool {
        self.axis_distance(p) < self.a
    }
}

pub fn in_box(p: [f64; 3]) -> bool {
    (0..3).all(|k| p[k] >= BOX_MIN[k] && p[k] <= BOX_MAX[k])
}

/// Affine map of the box onto `[−1, 1]³`.
pub fn box_normalizer() -> Normalizer {
    Normalizer::new(BOX_MIN.to_vec(), BOX_MAX.to_vec()).expect("box has positive extent")
}

/// Features `[ρ, p, V_x, V_y, V_z]` at `p`, or `None` inside the obstacle.
pub fn evaluate(theta: &OracleParams, p: [f64; 3]) -> Result<Option<[f64; 5]>> {
    if !in_box(p) {
        return Err(Error::input(format!("point {p:?} lies outside the oracle box")));
    }
    Ok(evaluate_unchecked(theta, p))
}

fn evaluate_unchecked(theta: &OracleParams, p: [f64; 3]) -> Option<[f64; 5]> {
    let (dx, dy) = (p[0], p[1] - theta.c_y);
    let r2 = dx * dx + dy * dy;
    let r = r2.sqrt();
    if r < theta.a {
        return None;
    }
    let a2 = theta.a * theta.a;
    let r4 = r2 * r2;
    let u = FREESTREAM * (1.0 - a2 * (dx * dx - dy * dy) / r4);
    let v = -2.0 * FREESTREAM * a2 * dx * dy / r4;
    let b = (1.0 - (-(r - theta.a) / WALL_LAYER).exp()).clamp(0.0, 1.0);
    let (vx, vy, vz) = (u * b, v * b, 0.1 * p[2] * b);
    let front = (theta.s * (p[0] - theta.x_s)).tanh();
    let pressure = 1.0 + 0.5 * (FREESTREAM * FREESTREAM - (vx * vx + vy * vy + vz * vz)) + 0.2 * front;
    let rho = 1.0 + 0.3 * front;
    Some([rho, pressure, vx, vy, vz])
}

/// Rejection-samples `n` points uniformly in the box with `r ≥ a + wall_offset`.
pub fn sample_dataset(theta: &OracleParams, n: usize, seed: u64, wall_offset: f64) -> Result<FieldDataset> {
    theta.validate()?;
    if n == 0 {
        return Err(Error::input("cannot sample zero points"));
    }
    if !(0.0..0.5).contains(&wall_offset) {
        return Err(Error::config(format!("wall offset {wall_offset} outside [0, 0.5)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(3 * n);
    let mut features = Vec::with_capacity(5 * n);
    let limit = theta.a + wall_offset;
    while coords.len() < 3 * n {
        let p = [
            rng.random_range(BOX_MIN[0]..=BOX_MAX[0]),
            rng.random_range(BOX_MIN[1]..=BOX_MAX[1]),
            rng.random_range(BOX_MIN[2]..=BOX_MAX[2]),
        ];
        if theta.axis_distance(p) < limit {
            continue;
        }
        let f = evaluate_unchecked(theta, p).expect("exterior point");
        coords.extend_from_slice(&p);
        features.extend_from_slice(&f);
    }
    FieldDataset::new(Matrix::from_vec(n, 3, coords)?, Matrix::from_vec(n, 5, features)?)
}

/// Lateral cylinder surface as an `n_circ × n_span` vertex grid, two triangles per quad.
/// Vertex `(i, j)` sits at index `j·n_circ + i`.
pub fn surface_mesh(theta: &OracleParams, n_circ: usize, n_span: usize) -> Result<SurfaceMesh> {
    if n_circ < 3 || n_span < 2 {
        return Err(Error::config(format!(
            "mesh needs n_circ ≥ 3 and n_span ≥ 2, got {n_circ} and {n_span}"
        )));
    }
    let mut vertices = Vec::with_capacity(n_circ * n_span);
    for j in 0..n_span {
        let z = j as f64 / (n_span - 1) as f64;
        for i in 0..n_circ {
            let phi = std::f64::consts::TAU * i as f64 / n_circ as f64;
            vertices.push([theta.a * phi.cos(), theta.c_y + theta.a * phi.sin(), z]);
        }
    }
    let id = |i: usize, j: usize| (j * n_circ + i % n_circ) as u32;
    let mut triangles = Vec::with_capacity(2 * n_circ * (n_span - 1));
    for j in 0..n_span - 1 {
        for i in 0..n_circ {
            triangles.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            triangles.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    SurfaceMesh::new(vertices, triangles)
}

/// Uniform `n_y × n_z` node grid on the plane `x = x_out`, row-major in y then z.
pub fn plane_grid(x_out: f64, n_y: usize, n_z: usize) -> Result<Matrix> {
    if !(BOX_MIN[0]..=BOX_MAX[0]).contains(&x_out) {
        return Err(Error::input(format!("plane x = {x_out} lies outside the box")));
    }
    if n_y < 2 || n_z < 2 {
        return Err(Error::config("plane grid needs at least 2×2 nodes"));
    }
    let mut data = Vec::with_capacity(3 * n_y * n_z);
    for iy in 0..n_y {
        let y = BOX_MIN[1] + (BOX_MAX[1] - BOX_MIN[1]) * iy as f64 / (n_y - 1) as f64;
        for iz in 0..n_z {
            let z = BOX_MIN[2] + (BOX_MAX[2] - BOX_MIN[2]) * iz as f64 / (n_z - 1) as f64;
            data.extend_from_slice(&[x_out, y, z]);
        }
    }
    Matrix::from_vec(n_y * n_z, 3, data)
}

/// Plane-averaged quantities of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Qoi {
    /// Mean of ρ·V_x.
    pub mass_flux: f64,
    pub mean_pressure: f64,
}

pub const QOI_NAMES: [&str; 2] = ["mass_flux", "mean_pressure"];

impl Qoi {
    pub fn values(&self) -> [f64; 2] {
        [self.mass_flux, self.mean_pressure]
    }
}

/// Averages ρ·V_x and p over rows whose `mask` entry is true.
pub fn qoi_from_features(features: &Matrix, mask: &[bool]) -> Result<Qoi> {
    if features.rows() != mask.len() || features.cols() < 3 {
        return Err(Error::config("qoi features and mask disagree"));
    }
    let (mut flux, mut p, mut n) = (0.0, 0.0, 0usize);
    for (row, &keep) in features.row_iter().zip(mask) {
        if keep {
            flux += row[0] * row[2];
            p += row[1];
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::input("plane lies entirely inside the obstacle"));
    }
    Ok(Qoi {
        mass_flux: flux / n as f64,
        mean_pressure: p / n as f64,
    })
}

/// Plane nodes, exterior mask and exact features (zeros at interior nodes).
pub fn plane_samples(theta: &OracleParams, x_out: f64, n: usize) -> Result<(Matrix, Vec<bool>, Matrix)> {
    let grid = plane_grid(x_out, n, n)?;
    let mut mask = Vec::with_capacity(grid.rows());
    let mut feats = Matrix::zeros(grid.rows(), 5);
    for r in 0..grid.rows() {
        let g = grid.row(r);
        match evaluate_unchecked(theta, [g[0], g[1], g[2]]) {
            Some(f) => {
                feats.row_mut(r).copy_from_slice(&f);
                mask.push(true);
            }
            None => mask.push(false),
        }
    }
    Ok((grid, mask, feats))
}

pub fn qoi(theta: &OracleParams, x_out: f64, n: usize) -> Result<Qoi> {
    let (_, mask, feats) = plane_samples(theta, x_out, n)?;
    qoi_from_features(&feats, &mask)
}

/// Distribution of oracle parameters for generated configuration sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    /// All four parameters uniform over their ranges.
    Full,
    /// Only the geometry `(a, c_y)` varies; the front is fixed.
    Geometric { s: f64, x_s: f64 },
}

impl Default for Family {
    fn default() -> Self {
        Family::Geometric { s: 15.0, x_s: 0.5 }
    }
}

impl Family {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> OracleParams {
        let u = |rng: &mut R, (lo, hi): (f64, f64)| rng.random_range(lo..=hi);
        let a = u(rng, RADIUS_RANGE);
        let c_y = u(rng, OFFSET_RANGE);
        let (s, x_s) = match *self {
            Family::Full => (u(rng, STEEPNESS_RANGE), u(rng, SHOCK_RANGE)),
            Family::Geometric { s, x_s } => (s, x_s),
        };
        OracleParams { a, c_y, s, x_s }
    }

    /// `count` parameter draws from one seeded stream.
    pub fn sample_many(&self, count: usize, seed: u64) -> Vec<OracleParams> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sample(&mut rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta() -> OracleParams {
        OracleParams::new(0.2, 0.1, 10.0, 0.5).unwrap()
    }

    #[test]
    fn no_slip_on_surface() {
        let t = theta();
        let f = evaluate(&t, [0.2, 0.1, 0.5]).unwrap().unwrap();
        assert_eq!(&f[2..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn shock_midpoint_density() {
        let t = theta();
        let f = evaluate(&t, [0.5, 0.9, 0.3]).unwrap().unwrap();
        assert_eq!(f[0], 1.0);
    }

    #[test]
    fn far_field_limit() {
        let t = OracleParams::new(0.1, 0.0, 10.0, 0.5).unwrap();
        let p = [-0.6, -0.8, 0.0];
        assert!((t.axis_distance(p) - 10.0 * t.a).abs() < 1e-12);
        let f = evaluate(&t, p).unwrap().unwrap();
        assert!((f[2] - 1.0).abs() < 1e-2);
        assert!(f[3].abs() < 1e-2 && f[4].abs() < 1e-2);
        let expect = 1.0 + 0.2 * (t.s * (p[0] - t.x_s)).tanh();
        assert!((f[1] - expect).abs() < 1e-2);
    }

    #[test]
    fn inside_and_outside() {
        let t = theta();
        assert_eq!(evaluate(&t, [0.0, 0.1, 0.5]).unwrap(), None);
        assert!(matches!(evaluate(&t, [0.0, 0.1, 1.5]), Err(Error::Input(_))));
    }

    #[test]
    fn density_bounds() {
        let ds = sample_dataset(&theta(), 2000, 1, 1e-3).unwrap();
        for f in ds.features.row_iter() {
            assert!((0.7..=1.3).contains(&f[0]));
        }
    }

    #[test]
    fn parameter_ranges_enforced() {
        assert!(OracleParams::new(0.05, 0.0, 10.0, 0.5).is_err());
        assert!(OracleParams::new(0.2, 0.3, 10.0, 0.5).is_err());
        assert!(OracleParams::new(0.2, 0.0, 30.0, 0.5).is_err());
        assert!(OracleParams::new(0.2, 0.0, 10.0, 0.9).is_err());
    }

    #[test]
    fn sampling_contract() {
        let t = theta();
        assert!(sample_dataset(&t, 0, 0, 1e-3).is_err());
        let a = sample_dataset(&t, 500, 42, 1e-3).unwrap();
        let b = sample_dataset(&t, 500, 42, 1e-3).unwrap();
        assert_eq!(a, b);
        for c in a.coords.row_iter() {
            assert!(t.axis_distance([c[0], c[1], c[2]]) >= t.a + 1e-3);
            assert!(in_box([c[0], c[1], c[2]]));
        }
    }

    #[test]
    fn mesh_counts_and_radius() {
        let t = theta();
        let m = surface_mesh(&t, 64, 16).unwrap();
        assert_eq!(m.vertices.len(), 1024);
        assert_eq!(m.triangles.len(), 1920);
        for v in &m.vertices {
            assert!((t.axis_distance(*v) - t.a).abs() < 1e-12);
        }
        assert!(surface_mesh(&t, 2, 16).is_err());
        assert!(surface_mesh(&t, 3, 1).is_err());
    }

    #[test]
    fn constant_field_qoi() {
        let mut f = Matrix::zeros(4, 5);
        for r in 0..4 {
            f.row_mut(r).copy_from_slice(&[1.0, 2.0, 1.0, 0.0, 0.0]);
        }
        let q = qoi_from_features(&f, &[true, false, true, true]).unwrap();
        assert_eq!(q.mass_flux, 1.0);
        assert_eq!(q.mean_pressure, 2.0);
        assert!(qoi_from_features(&f, &[false; 4]).is_err());
    }

    #[test]
    fn pressure_qoi_monotone_in_shock_position() {
        let mut last = f64::INFINITY;
        for k in 0..=8 {
            let x_s = 0.3 + 0.05 * k as f64;
            let q = qoi(&OracleParams::new(0.2, 0.0, 10.0, x_s).unwrap(), 0.9, 21).unwrap();
            assert!(q.mean_pressure < last);
            last = q.mean_pressure;
        }
    }

    #[test]
    fn family_draws_stay_in_range() {
        for t in Family::Full.sample_many(50, 3) {
            t.validate().unwrap();
        }
        for t in Family::default().sample_many(10, 3) {
            assert_eq!((t.s, t.x_s), (15.0, 0.5));
        }
    }
}
