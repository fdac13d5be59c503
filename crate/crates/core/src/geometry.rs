//! Point-cloud encoder producing the pseudo design vector of a surface.
//!
//! Each vertex goes through the same residual MLP
//! (`h₀ = A_in p + a_in`, then `h ← h + B₂ GELU(B₁ GELU(h) + c₁) + c₂` per
//! block), the per-vertex features are max-pooled coordinate-wise, and a final
//! affine map yields the embedding. Triangle connectivity is ignored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Layout, Matrix, ParamSet, ParamVector, Tape, Var};

/// Triangulated surface. Only the vertices feed the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl SurfaceMesh {
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            triangles,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.vertices.len();
        if let Some((t, tri)) = self
            .triangles
            .iter()
            .enumerate()
            .find(|(_, tri)| tri.iter().any(|&i| i as usize >= v))
        {
            return Err(Error::input(format!(
                "triangle {t} {tri:?} references a vertex beyond {v}"
            )));
        }
        if self.vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::input("mesh has non-finite vertex coordinates"));
        }
        Ok(())
    }

    pub fn vertex_matrix(&self) -> Matrix {
        let data = self.vertices.iter().flatten().copied().collect();
        Matrix::from_vec(self.vertices.len(), 3, data).expect("3 columns per vertex")
    }

    pub fn centroid(&self) -> Option<[f64; 3]> {
        if self.vertices.is_empty() {
            return None;
        }
        let n = self.vertices.len() as f64;
        let mut c = [0.0; 3];
        for v in &self.vertices {
            for k in 0..3 {
                c[k] += v[k];
            }
        }
        Some(c.map(|s| s / n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_dim: usize,
    pub main_width: usize,
    pub residual_width: usize,
    pub residual_blocks: usize,
    pub embedding_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            in_dim: 3,
            main_width: 128,
            residual_width: 192,
            residual_blocks: 2,
            embedding_dim: 16,
        }
    }
}

impl EncoderConfig {
    pub fn layout(&self) -> Layout {
        let (m, r) = (self.main_width, self.residual_width);
        let mut l = Layout::new();
        l.weight("A_in", m, self.in_dim).bias("a_in", m);
        for j in 1..=self.residual_blocks {
            l.weight(format!("B1_{j}"), r, m)
                .bias(format!("c1_{j}"), r)
                .weight(format!("B2_{j}"), m, r)
                .bias(format!("c2_{j}"), m);
        }
        l.weight("E_out", self.embedding_dim, m)
            .bias("e_out", self.embedding_dim);
        l
    }

    pub fn param_count(&self) -> usize {
        let (m, r, d) = (self.main_width, self.residual_width, self.embedding_dim);
        m * self.in_dim + m + self.residual_blocks * (r * m + r + m * r + m) + d * m + d
    }

    pub fn init_params(&self, seed: u64) -> ParamVector {
        ParamVector::init_uniform(self.layout(), seed)
    }
}

/// Records the encoder on `tape` for an `V × 3` vertex matrix; returns a `1 × d` node.
pub fn graph(
    tape: &mut Tape,
    set: ParamSet,
    cfg: &EncoderConfig,
    params: &ParamVector,
    vertices: &Matrix,
) -> Result<Var> {
    let pooled = pooled_graph(tape, set, cfg, params, vertices)?;
    let w = tape.param(set, params, "E_out")?;
    let b = tape.param(set, params, "e_out")?;
    tape.linear(pooled, w, b)
}

/// Per-vertex residual MLP followed by the coordinate-wise max over vertices.
fn pooled_graph(
    tape: &mut Tape,
    set: ParamSet,
    cfg: &EncoderConfig,
    params: &ParamVector,
    vertices: &Matrix,
) -> Result<Var> {
    if vertices.rows() == 0 {
        return Err(Error::input("cannot encode an empty mesh"));
    }
    if params.len() != cfg.param_count() {
        return Err(Error::config(format!(
            "encoder expects {} parameters, got {}",
            cfg.param_count(),
            params.len()
        )));
    }
    let p = tape.constant(vertices.clone());
    let w = tape.param(set, params, "A_in")?;
    let b = tape.param(set, params, "a_in")?;
    let mut h = tape.linear(p, w, b)?;
    for j in 1..=cfg.residual_blocks {
        let a = tape.gelu(h);
        let w1 = tape.param(set, params, &format!("B1_{j}"))?;
        let c1 = tape.param(set, params, &format!("c1_{j}"))?;
        let inner = tape.linear(a, w1, c1)?;
        let inner = tape.gelu(inner);
        let w2 = tape.param(set, params, &format!("B2_{j}"))?;
        let c2 = tape.param(set, params, &format!("c2_{j}"))?;
        let branch = tape.linear(inner, w2, c2)?;
        h = tape.add(h, branch)?;
    }
    tape.max_pool_rows(h)
}

/// Embedding of a vertex matrix (already in the model's coordinate frame).
pub fn encode_vertices(cfg: &EncoderConfig, params: &ParamVector, vertices: &Matrix) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let set = tape.param_set(params.len());
    let out = graph(&mut tape, set, cfg, params, vertices)?;
    Ok(tape.value(out).as_slice().to_vec())
}

/// Pseudo design vector of `mesh`.
pub fn encode_geometry(cfg: &EncoderConfig, params: &ParamVector, mesh: &SurfaceMesh) -> Result<Vec<f64>> {
    encode_vertices(cfg, params, &mesh.vertex_matrix())
}

/// Small MLP mapping `[embedding ‖ noise]` to a surface point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub embedding_dim: usize,
    pub noise_dim: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl DecoderConfig {
    pub fn new(embedding_dim: usize) -> Self {
        Self {
            embedding_dim,
            noise_dim: 3,
            hidden: 128,
            layers: 3,
        }
    }

    pub fn layout(&self) -> Layout {
        let mut l = Layout::new();
        let mut width = self.embedding_dim + self.noise_dim;
        for k in 1..=self.layers {
            l.weight(format!("D_{k}"), self.hidden, width)
                .bias(format!("d_{k}"), self.hidden);
            width = self.hidden;
        }
        l.weight("D_out", 3, width).bias("d_out", 3);
        l
    }

    pub fn init_params(&self, seed: u64) -> ParamVector {
        ParamVector::init_uniform(self.layout(), seed)
    }
}

/// Decodes each row of `inputs` (`[embedding ‖ noise]`) to a point; returns an `n × 3` node.
pub fn decoder_graph(
    tape: &mut Tape,
    set: ParamSet,
    cfg: &DecoderConfig,
    params: &ParamVector,
    inputs: Var,
) -> Result<Var> {
    let mut h = inputs;
    for k in 1..=cfg.layers {
        let w = tape.param(set, params, &format!("D_{k}"))?;
        let b = tape.param(set, params, &format!("d_{k}"))?;
        let z = tape.linear(h, w, b)?;
        h = tape.gelu(z);
    }
    let w = tape.param(set, params, "D_out")?;
    let b = tape.param(set, params, "d_out")?;
    tape.linear(h, w, b)
}

pub fn reconstruct_point(
    cfg: &DecoderConfig,
    params: &ParamVector,
    embedding: &[f64],
    noise: [f64; 3],
) -> Result<[f64; 3]> {
    if embedding.len() != cfg.embedding_dim {
        return Err(Error::config(format!(
            "decoder expects a {}-dim embedding, got {}",
            cfg.embedding_dim,
            embedding.len()
        )));
    }
    let mut row = embedding.to_vec();
    row.extend_from_slice(&noise);
    let mut tape = Tape::new();
    let set = tape.param_set(params.len());
    let input = tape.constant(Matrix::row_vector(row));
    let out = decoder_graph(&mut tape, set, cfg, params, input)?;
    let v = tape.value(out).as_slice();
    Ok([v[0], v[1], v[2]])
}

/// Mean nearest-neighbour squared distance from `a` to `b` plus from `b` to `a`.
pub fn chamfer_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("chamfer distance of an empty point set"));
    }
    let one_way = |from: &[[f64; 3]], to: &[[f64; 3]]| {
        from.iter()
            .map(|p| {
                to.iter()
                    .map(|q| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    Ok(one_way(a, b) + one_way(b, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            in_dim: 3,
            main_width: 16,
            residual_width: 24,
            residual_blocks: 2,
            embedding_dim: 6,
        }
    }

    fn random_mesh(v: usize, seed: u64) -> SurfaceMesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vertices = (0..v)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        let triangles = (0..v.saturating_sub(2))
            .map(|i| [i as u32, i as u32 + 1, i as u32 + 2])
            .collect();
        SurfaceMesh::new(vertices, triangles).unwrap()
    }

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn default_counts() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.layout().len(), cfg.param_count());
        assert_eq!(cfg.param_count(), 512 + 2 * (24_768 + 24_704) + 2_064);
    }

    #[test]
    fn duplicated_vertex_matches_single() {
        let cfg = small_cfg();
        let p = cfg.init_params(0);
        let one = SurfaceMesh::new(vec![[0.2, -0.4, 0.7]], vec![]).unwrap();
        let many = SurfaceMesh::new(vec![[0.2, -0.4, 0.7]; 17], vec![]).unwrap();
        assert_eq!(
            bits(&encode_geometry(&cfg, &p, &one).unwrap()),
            bits(&encode_geometry(&cfg, &p, &many).unwrap())
        );
    }

    #[test]
    fn permutation_invariant_bitwise() {
        let cfg = small_cfg();
        let p = cfg.init_params(1);
        let mesh = random_mesh(200, 2);
        let base = encode_geometry(&cfg, &p, &mesh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let mut shuffled = mesh.clone();
            shuffled.vertices.shuffle(&mut rng);
            shuffled.triangles.clear();
            assert_eq!(bits(&base), bits(&encode_geometry(&cfg, &p, &shuffled).unwrap()));
        }
    }

    #[test]
    fn triangles_do_not_matter() {
        let cfg = small_cfg();
        let p = cfg.init_params(4);
        let mesh = random_mesh(30, 5);
        let mut other = mesh.clone();
        other.triangles.reverse();
        other.triangles.truncate(3);
        assert_eq!(
            encode_geometry(&cfg, &p, &mesh).unwrap(),
            encode_geometry(&cfg, &p, &other).unwrap()
        );
    }

    #[test]
    fn zero_params_give_output_bias() {
        let cfg = small_cfg();
        let mut p = ParamVector::zeros(cfg.layout());
        let bias: Vec<f64> = (0..cfg.embedding_dim).map(|i| i as f64 * 0.5 - 1.0).collect();
        p.slice_mut("e_out").unwrap().copy_from_slice(&bias);
        let e = encode_geometry(&cfg, &p, &random_mesh(10, 1)).unwrap();
        assert_eq!(e, bias);
    }

    #[test]
    fn empty_mesh_is_input_error() {
        let cfg = small_cfg();
        let p = cfg.init_params(0);
        let mesh = SurfaceMesh::new(vec![], vec![]).unwrap();
        assert!(matches!(encode_geometry(&cfg, &p, &mesh), Err(Error::Input(_))));
    }

    #[test]
    fn bad_triangle_index_rejected() {
        assert!(SurfaceMesh::new(vec![[0.0; 3]; 2], vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn pooled_features_are_monotone_under_insertion() {
        let cfg = small_cfg();
        let p = cfg.init_params(6);
        let mesh = random_mesh(40, 7);
        let pooled = |m: &SurfaceMesh| {
            let mut t = Tape::new();
            let set = t.param_set(p.len());
            let v = pooled_graph(&mut t, set, &cfg, &p, &m.vertex_matrix()).unwrap();
            t.value(v).as_slice().to_vec()
        };
        let before = pooled(&mesh);
        let mut bigger = mesh.clone();
        bigger.vertices.push([0.9, 0.9, 0.1]);
        let after = pooled(&bigger);
        assert_eq!(before.len(), cfg.main_width);
        for (a, b) in before.iter().zip(&after) {
            assert!(b >= a);
        }
    }

    #[test]
    fn decoder_zero_params_output_zero() {
        let cfg = DecoderConfig::new(4);
        let p = ParamVector::zeros(cfg.layout());
        assert_eq!(reconstruct_point(&cfg, &p, &[1.0, 2.0, 3.0, 4.0], [0.5, -0.5, 1.0]).unwrap(), [0.0; 3]);
    }

    #[test]
    fn decoder_is_deterministic() {
        let cfg = DecoderConfig::new(4);
        let p = cfg.init_params(3);
        let e = [0.1, 0.2, -0.3, 0.4];
        let a = reconstruct_point(&cfg, &p, &e, [0.3, 0.1, -1.2]).unwrap();
        let b = reconstruct_point(&cfg, &p, &e, [0.3, 0.1, -1.2]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chamfer_examples() {
        let a = [[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]];
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer_distance(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap(), 2.0);
        let b = [[0.5, 0.0, 0.0], [1.0, 2.5, 3.0], [4.0, 0.0, 0.0]];
        assert_eq!(chamfer_distance(&a, &b).unwrap(), chamfer_distance(&b, &a).unwrap());
        assert!(chamfer_distance(&a, &[]).is_err());
    }

    #[test]
    fn tape_chamfer_matches_direct_formula() {
        let a = [[0.0, 0.1, 0.0], [1.0, 2.0, 3.0], [0.3, 0.3, 0.3]];
        let b = [[0.5, 0.0, 0.0], [1.0, 2.5, 3.0]];
        let mut t = Tape::new();
        let av = t.constant(Matrix::from_rows(&a).unwrap());
        let loss = t.chamfer(av, &Matrix::from_rows(&b).unwrap()).unwrap();
        assert!((t.value(loss).get(0, 0) - chamfer_distance(&a, &b).unwrap()).abs() < 1e-15);
    }
}
