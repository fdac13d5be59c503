//! Rigid motions about the x-axis: recentering and rotation augmentation.
//!
//! Rotation by `α` maps `(y, z) ↦ (y cos α − z sin α, y sin α + z cos α)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{FieldDataset, VY, VZ};
use crate::error::{Error, Result};
use crate::geometry::SurfaceMesh;
use crate::tensor::Matrix;

#[inline]
fn rotate_yz(y: f64, z: f64, sin: f64, cos: f64) -> (f64, f64) {
    (y * cos - z * sin, y * sin + z * cos)
}

/// Rotates columns `(cy, cz)` of every row by `alpha`.
pub fn rotate_columns(m: &mut Matrix, cy: usize, cz: usize, alpha: f64) {
    if alpha == 0.0 {
        return;
    }
    let (sin, cos) = alpha.sin_cos();
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let (y, z) = rotate_yz(row[cy], row[cz], sin, cos);
        row[cy] = y;
        row[cz] = z;
    }
}

pub fn rotate_points(points: &mut [[f64; 3]], alpha: f64) {
    if alpha == 0.0 {
        return;
    }
    let (sin, cos) = alpha.sin_cos();
    for p in points {
        let (y, z) = rotate_yz(p[1], p[2], sin, cos);
        p[1] = y;
        p[2] = z;
    }
}

/// Rotates coordinates, mesh vertices and the `(V_y, V_z)` channels by `alpha` about x.
pub fn rotate_about_x(ds: &mut FieldDataset, mesh: &mut SurfaceMesh, alpha: f64) {
    rotate_columns(&mut ds.coords, 1, 2, alpha);
    rotate_columns(&mut ds.features, VY, VZ, alpha);
    rotate_points(&mut mesh.vertices, alpha);
}

/// Draws one angle (degrees, uniform over `range_deg`) and rotates the whole batch by it.
/// Returns the angle in radians.
pub fn augment_rotation<R: Rng + ?Sized>(
    ds: &mut FieldDataset,
    mesh: &mut SurfaceMesh,
    range_deg: (f64, f64),
    rng: &mut R,
) -> Result<f64> {
    let (lo, hi) = range_deg;
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(Error::config(format!("invalid rotation range [{lo}, {hi}]")));
    }
    let deg = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let alpha = deg.to_radians();
    rotate_about_x(ds, mesh, alpha);
    Ok(alpha)
}

/// The rigid motion applied by [`recenter`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecenterRecord {
    /// Subtracted from every x-coordinate.
    pub shift_x: f64,
    /// Rotation about x applied after the shift, radians.
    pub angle: f64,
    /// Set when the centroid sat on the x-axis and no rotation was applied.
    pub rotation_skipped: bool,
}

impl RecenterRecord {
    pub const IDENTITY: RecenterRecord = RecenterRecord {
        shift_x: 0.0,
        angle: 0.0,
        rotation_skipped: false,
    };

    /// Maps original-frame query coordinates into the recentered frame.
    pub fn apply_coords(&self, coords: &mut Matrix) {
        for r in 0..coords.rows() {
            coords.row_mut(r)[0] -= self.shift_x;
        }
        rotate_columns(coords, 1, 2, self.angle);
    }

    pub fn apply_mesh(&self, mesh: &mut SurfaceMesh) {
        for v in &mut mesh.vertices {
            v[0] -= self.shift_x;
        }
        rotate_points(&mut mesh.vertices, self.angle);
    }

    /// Rotates recentered-frame velocity channels back to the original frame.
    pub fn restore_features(&self, features: &mut Matrix) {
        rotate_columns(features, VY, VZ, -self.angle);
    }
}

/// Translates along x so the surface centroid has x = 0, then rotates about x so the
/// centroid lands at y = 0, z ≥ 0. Volume coordinates and `(V_y, V_z)` follow the same motion.
pub fn recenter(
    mesh: &SurfaceMesh,
    ds: &FieldDataset,
) -> Result<(SurfaceMesh, FieldDataset, RecenterRecord)> {
    let c = mesh
        .centroid()
        .ok_or_else(|| Error::input("cannot recenter an empty mesh"))?;
    let skipped = c[1] == 0.0 && c[2] == 0.0;
    let record = RecenterRecord {
        shift_x: c[0],
        angle: if skipped { 0.0 } else { c[1].atan2(c[2]) },
        rotation_skipped: skipped,
    };
    let mut mesh = mesh.clone();
    let mut ds = ds.clone();
    record.apply_mesh(&mut mesh);
    record.apply_coords(&mut ds.coords);
    rotate_columns(&mut ds.features, VY, VZ, record.angle);
    Ok((mesh, ds, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(rows: usize, seed: u64) -> (FieldDataset, SurfaceMesh) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coords = Matrix::from_vec(rows, 3, (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let features = Matrix::from_vec(rows, 5, (0..rows * 5).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let verts: Vec<[f64; 3]> = (0..6)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let mesh = SurfaceMesh::new(verts, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        (FieldDataset::new(coords, features).unwrap(), mesh)
    }

    #[test]
    fn quarter_turn() {
        let mut m = Matrix::from_rows(&[[0.0, 1.0, 0.0]]).unwrap();
        rotate_columns(&mut m, 1, 2, std::f64::consts::FRAC_PI_2);
        assert!(m.get(0, 1).abs() < 1e-15);
        assert!((m.get(0, 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_range_is_identity() {
        let (mut ds, mut mesh) = sample(10, 1);
        let (ds0, mesh0) = (ds.clone(), mesh.clone());
        let a = augment_rotation(&mut ds, &mut mesh, (0.0, 0.0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(a, 0.0);
        assert_eq!(ds, ds0);
        assert_eq!(mesh, mesh0);
    }

    #[test]
    fn augmentation_preserves_invariants() {
        let (mut ds, mut mesh) = sample(50, 2);
        let ds0 = ds.clone();
        let alpha = augment_rotation(&mut ds, &mut mesh, (-5.0, 5.0), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert!(alpha.abs() <= 5f64.to_radians());
        for (a, b) in ds.features.row_iter().zip(ds0.features.row_iter()) {
            assert_eq!(&a[..3], &b[..3]);
            let na = a[3] * a[3] + a[4] * a[4];
            let nb = b[3] * b[3] + b[4] * b[4];
            assert!((na - nb).abs() < 1e-12);
        }
        for (a, b) in ds.coords.row_iter().zip(ds0.coords.row_iter()) {
            assert_eq!(a[0], b[0]);
        }
    }

    #[test]
    fn bad_range_rejected() {
        let (mut ds, mut mesh) = sample(1, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(augment_rotation(&mut ds, &mut mesh, (5.0, -5.0), &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn rotate_then_inverse_restores(alpha in -3.2f64..3.2, seed in 0u64..1000) {
            let (ds0, mesh0) = sample(8, seed);
            let (mut ds, mut mesh) = (ds0.clone(), mesh0.clone());
            rotate_about_x(&mut ds, &mut mesh, alpha);
            rotate_about_x(&mut ds, &mut mesh, -alpha);
            for (a, b) in ds.coords.as_slice().iter().zip(ds0.coords.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in ds.features.as_slice().iter().zip(ds0.features.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    fn single_vertex_mesh(p: [f64; 3]) -> SurfaceMesh {
        SurfaceMesh::new(vec![p], vec![]).unwrap()
    }

    #[test]
    fn centroid_lands_on_positive_z() {
        let mesh = single_vertex_mesh([5.0, 1.0, 0.0]);
        let ds = FieldDataset::new(
            Matrix::from_rows(&[[5.0, 1.0, 0.0]]).unwrap(),
            Matrix::from_rows(&[[1.0, 1.0, 1.0, 0.3, 0.4]]).unwrap(),
        )
        .unwrap();
        let (m, d, rec) = recenter(&mesh, &ds).unwrap();
        let c = m.centroid().unwrap();
        assert_eq!(c[0], 0.0);
        assert!(c[1].abs() < 1e-15);
        assert!((c[2] - 1.0).abs() < 1e-15);
        assert!(!rec.rotation_skipped);
        let f = d.features.row(0);
        assert!((f[3].hypot(f[4]) - 0.5).abs() < 1e-12);
        assert_eq!(d.coords.row(0), m.vertices[0].as_slice());
    }

    #[test]
    fn centered_configuration_is_identity() {
        let mesh = single_vertex_mesh([0.0, 0.0, 2.0]);
        let (ds, _) = sample(5, 3);
        let (m, d, rec) = recenter(&mesh, &ds).unwrap();
        assert_eq!(rec.shift_x, 0.0);
        assert_eq!(rec.angle, 0.0);
        assert_eq!(m, mesh);
        assert_eq!(d, ds);
    }

    #[test]
    fn on_axis_centroid_skips_rotation() {
        let mesh = single_vertex_mesh([1.0, 0.0, 0.0]);
        let (ds, _) = sample(3, 4);
        let (_, _, rec) = recenter(&mesh, &ds).unwrap();
        assert!(rec.rotation_skipped);
        assert_eq!(rec.angle, 0.0);
    }

    #[test]
    fn record_round_trips_velocities() {
        let mesh = single_vertex_mesh([0.3, -0.4, 0.2]);
        let (ds, _) = sample(6, 5);
        let (_, d, rec) = recenter(&mesh, &ds).unwrap();
        let mut coords = ds.coords.clone();
        rec.apply_coords(&mut coords);
        assert_eq!(coords, d.coords);
        let mut f = d.features.clone();
        rec.restore_features(&mut f);
        for (a, b) in f.as_slice().iter().zip(ds.features.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
