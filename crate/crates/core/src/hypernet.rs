//! Residual hyper-net mapping a geometry embedding to additive changes of the
//! backbone's modulated slots, and the full geometry → field model.
//!
//! `z₀ = W_in θ′ + b_in`; per block `z_k = z_{k−1} + W2_k·dropout(GELU(W1_k·GELU(z_{k−1}) + c1_k)) + c2_k`;
//! `delta = W_out z_K′ + b_out`. `W_out` and `b_out` start at zero.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{self, modulation_slots, BackboneConfig};
use crate::data::{recenter, FieldDataset, Normalizer};
use crate::error::{Error, Result};
use crate::geometry::{self, EncoderConfig, SurfaceMesh};
use crate::tensor::{Layout, Matrix, ParamSet, ParamVector, Tape, Var};
use crate::train::{backbone_loss_grad, LossKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub in_dim: usize,
    pub main_width: usize,
    pub residual_width: usize,
    pub blocks: usize,
    pub out_dim: usize,
    pub dropout: f64,
}

impl Default for HyperConfig {
    fn default() -> Self {
        Self::for_backbone(&BackboneConfig::default(), 16)
    }
}

impl HyperConfig {
    /// Defaults sized to modulate `backbone` from an `embedding_dim` vector.
    pub fn for_backbone(backbone: &BackboneConfig, embedding_dim: usize) -> Self {
        Self {
            in_dim: embedding_dim,
            main_width: 48,
            residual_width: 96,
            blocks: 1,
            out_dim: modulation_slots(backbone).total,
            dropout: 0.1,
        }
    }

    pub fn layout(&self) -> Layout {
        let (m, r) = (self.main_width, self.residual_width);
        let mut l = Layout::new();
        l.weight("W_in", m, self.in_dim).bias("b_in", m);
        for k in 1..=self.blocks {
            l.weight(format!("W1_{k}"), r, m)
                .bias(format!("c1_{k}"), r)
                .weight(format!("W2_{k}"), m, r)
                .bias(format!("c2_{k}"), m);
        }
        l.weight("W_out", self.out_dim, m).bias("b_out", self.out_dim);
        l
    }

    pub fn param_count(&self) -> usize {
        let (m, r) = (self.main_width, self.residual_width);
        m * self.in_dim + m + self.blocks * (2 * r * m + r + m) + self.out_dim * m + self.out_dim
    }

    /// Uniform fan-in init with the output layer zeroed.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut p = ParamVector::init_uniform(self.layout(), seed);
        p.slice_mut("W_out").expect("slot").fill(0.0);
        p.slice_mut("b_out").expect("slot").fill(0.0);
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.main_width == 0 || self.residual_width == 0 || self.out_dim == 0 {
            return Err(Error::config("hyper-net widths must be positive"));
        }
        crate::tensor::check_dropout_rate(self.dropout)
    }
}

/// Records the hyper-net on `tape` for a `1 × in_dim` embedding node.
/// Passing `rng` enables dropout.
pub fn graph<R: Rng + ?Sized>(
    tape: &mut Tape,
    set: ParamSet,
    cfg: &HyperConfig,
    params: &ParamVector,
    theta: Var,
    mut rng: Option<&mut R>,
) -> Result<Var> {
    if params.len() != cfg.param_count() {
        return Err(Error::config(format!(
            "hyper-net expects {} parameters, got {}",
            cfg.param_count(),
            params.len()
        )));
    }
    if tape.value(theta).shape() != (1, cfg.in_dim) {
        return Err(Error::config(format!(
            "embedding has shape {:?}, hyper-net expects 1×{}",
            tape.value(theta).shape(),
            cfg.in_dim
        )));
    }
    let w = tape.param(set, params, "W_in")?;
    let b = tape.param(set, params, "b_in")?;
    let mut z = tape.linear(theta, w, b)?;
    for k in 1..=cfg.blocks {
        let a = tape.gelu(z);
        let w1 = tape.param(set, params, &format!("W1_{k}"))?;
        let c1 = tape.param(set, params, &format!("c1_{k}"))?;
        let inner = tape.linear(a, w1, c1)?;
        let inner = tape.gelu(inner);
        let inner = tape.dropout(inner, cfg.dropout, rng.as_deref_mut())?;
        let w2 = tape.param(set, params, &format!("W2_{k}"))?;
        let c2 = tape.param(set, params, &format!("c2_{k}"))?;
        let branch = tape.linear(inner, w2, c2)?;
        z = tape.add(z, branch)?;
    }
    let w = tape.param(set, params, "W_out")?;
    let b = tape.param(set, params, "b_out")?;
    tape.linear(z, w, b)
}

/// Delta vector for `theta`; `rng = None` is eval mode.
pub fn hyper_forward<R: Rng + ?Sized>(
    cfg: &HyperConfig,
    params: &ParamVector,
    theta: &[f64],
    rng: Option<&mut R>,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let set = tape.param_set(params.len());
    let t = tape.constant(Matrix::row_vector(theta.to_vec()));
    let out = graph(&mut tape, set, cfg, params, t, rng)?;
    Ok(tape.value(out).as_slice().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub encoder: usize,
    pub hyper: usize,
    pub backbone: usize,
    /// Encoder plus hyper-net: everything that maps a mesh to a delta.
    pub encoder_and_hyper: usize,
    pub total: usize,
}

/// Geometry encoder, hyper-net and shared base backbone with their normalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperModel {
    pub backbone: BackboneConfig,
    pub encoder: EncoderConfig,
    pub hyper: HyperConfig,
    pub encoder_params: ParamVector,
    pub hyper_params: ParamVector,
    pub base_params: ParamVector,
    pub coord_norm: Normalizer,
    pub feature_norm: Normalizer,
}

impl HyperModel {
    /// Fresh model; sub-networks draw from distinct streams derived from `seed`.
    pub fn init(
        backbone: BackboneConfig,
        encoder: EncoderConfig,
        hyper: HyperConfig,
        coord_norm: Normalizer,
        feature_norm: Normalizer,
        seed: u64,
    ) -> Result<Self> {
        let model = Self {
            encoder_params: encoder.init_params(seed.wrapping_mul(3).wrapping_add(1)),
            hyper_params: hyper.init_params(seed.wrapping_mul(3).wrapping_add(2)),
            base_params: backbone.init_params(seed.wrapping_mul(3).wrapping_add(3)),
            backbone,
            encoder,
            hyper,
            coord_norm,
            feature_norm,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.hyper.validate()?;
        let m = modulation_slots(&self.backbone).total;
        if self.hyper.out_dim != m {
            return Err(Error::config(format!(
                "hyper-net emits {} values, backbone modulates {m}",
                self.hyper.out_dim
            )));
        }
        if self.encoder.embedding_dim != self.hyper.in_dim {
            return Err(Error::config(format!(
                "encoder embeds into {} dims, hyper-net reads {}",
                self.encoder.embedding_dim, self.hyper.in_dim
            )));
        }
        if self.encoder.in_dim != 3 || self.backbone.input_dim != 3 || self.backbone.output_dim != 5 {
            return Err(Error::config("model expects 3D coordinates and 5 features"));
        }
        for (name, p, want) in [
            ("encoder", &self.encoder_params, self.encoder.param_count()),
            ("hyper-net", &self.hyper_params, self.hyper.param_count()),
            ("backbone", &self.base_params, self.backbone.param_count()),
        ] {
            if p.len() != want {
                return Err(Error::config(format!("{name} has {} parameters, expected {want}", p.len())));
            }
        }
        if self.coord_norm.channels() != 3 || self.feature_norm.channels() != 5 {
            return Err(Error::config("normalizers must cover 3 coordinates and 5 features"));
        }
        Ok(())
    }

    pub fn count_parameters(&self) -> ParameterCounts {
        let encoder = self.encoder.param_count();
        let hyper = self.hyper.param_count();
        let backbone = self.backbone.param_count();
        ParameterCounts {
            encoder,
            hyper,
            backbone,
            encoder_and_hyper: encoder + hyper,
            total: encoder + hyper + backbone,
        }
    }

    /// Mesh vertices mapped into the normalized coordinate frame.
    pub fn normalized_vertices(&self, mesh: &SurfaceMesh) -> Result<Matrix> {
        if mesh.vertices.is_empty() {
            return Err(Error::input("cannot encode an empty mesh"));
        }
        self.coord_norm.normalize_points(&mesh.vertices)
    }

    pub fn embed(&self, mesh: &SurfaceMesh) -> Result<Vec<f64>> {
        geometry::encode_vertices(&self.encoder, &self.encoder_params, &self.normalized_vertices(mesh)?)
    }

    /// Backbone parameters specialised to `mesh` (eval mode).
    pub fn specialise(&self, mesh: &SurfaceMesh) -> Result<ParamVector> {
        let theta = self.embed(mesh)?;
        let delta = hyper_forward::<rand_chacha::ChaCha8Rng>(&self.hyper, &self.hyper_params, &theta, None)?;
        backbone::apply_deltas(&self.backbone, &self.base_params, &delta)
    }

    /// Features at physical coordinates `x` around `mesh`, in physical units.
    pub fn predict_field(&self, mesh: &SurfaceMesh, x: &Matrix) -> Result<Matrix> {
        let params = self.specialise(mesh)?;
        let xn = self.coord_norm.normalize(x)?;
        let y = backbone::forward_batch(&self.backbone, &params, &xn)?;
        self.feature_norm.denormalize(&y)
    }

    /// [`predict_field`](Self::predict_field) for a configuration given in its original
    /// frame: mesh and coordinates are recentered first and `(V_y, V_z)` rotated back.
    pub fn predict_recentered(&self, mesh: &SurfaceMesh, x: &Matrix) -> Result<Matrix> {
        let (mesh, _, record) = recenter(mesh, &FieldDataset::new(Matrix::zeros(0, 3), Matrix::zeros(0, 5))?)?;
        let mut xr = x.clone();
        record.apply_coords(&mut xr);
        let mut y = self.predict_field(&mesh, &xr)?;
        record.restore_features(&mut y);
        Ok(y)
    }

    /// The base backbone alone, in physical units.
    pub fn predict_base(&self, x: &Matrix) -> Result<Matrix> {
        let xn = self.coord_norm.normalize(x)?;
        let y = backbone::forward_batch(&self.backbone, &self.base_params, &xn)?;
        self.feature_norm.denormalize(&y)
    }
}

/// Gradients of the end-to-end loss for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeGrads {
    pub encoder: Vec<f64>,
    pub hyper: Vec<f64>,
    pub base: Vec<f64>,
}

/// Loss and gradients of mesh → delta → backbone on one batch, everything already normalized.
///
/// The encoder and hyper-net are recorded on one tape; the backbone runs on
/// `base + delta` in row chunks, and its parameter gradient seeds the first tape
/// through the modulated slots.
pub fn composite_loss_grad<R: Rng + ?Sized>(
    model: &HyperModel,
    vertices: &Matrix,
    coords: &Matrix,
    target: &Matrix,
    loss: LossKind,
    rng: Option<&mut R>,
) -> Result<(f64, CompositeGrads)> {
    let mut tape = Tape::new();
    let enc_set = tape.param_set(model.encoder_params.len());
    let hyp_set = tape.param_set(model.hyper_params.len());
    let theta = geometry::graph(&mut tape, enc_set, &model.encoder, &model.encoder_params, vertices)?;
    let delta = graph(&mut tape, hyp_set, &model.hyper, &model.hyper_params, theta, rng)?;
    let effective = backbone::apply_deltas(&model.backbone, &model.base_params, tape.value(delta).as_slice())?;
    let (value, base) = backbone_loss_grad(&model.backbone, &effective, coords, target, loss)?;
    let layout = modulation_slots(&model.backbone);
    let seed = Matrix::row_vector(layout.gather(&base));
    let mut grads = tape.backward_seeded(delta, seed)?;
    Ok((
        value,
        CompositeGrads {
            encoder: grads.take(enc_set),
            hyper: grads.take(hyp_set),
            base,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_norms() -> (Normalizer, Normalizer) {
        (
            Normalizer::new(vec![-1.0, -1.0, 0.0], vec![1.0, 1.0, 1.0]).unwrap(),
            Normalizer::new(vec![0.0; 5], vec![2.0; 5]).unwrap(),
        )
    }

    fn mesh(seed: u64, n: usize) -> SurfaceMesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)])
            .collect();
        SurfaceMesh::new(v, vec![]).unwrap()
    }

    fn small_model(seed: u64) -> HyperModel {
        let bb = BackboneConfig { hidden: 8, depth: 2, ..Default::default() };
        let enc = EncoderConfig { main_width: 8, residual_width: 16, residual_blocks: 1, embedding_dim: 4, ..Default::default() };
        let hyp = HyperConfig { main_width: 8, residual_width: 16, ..HyperConfig::for_backbone(&bb, 4) };
        let (c, f) = unit_norms();
        HyperModel::init(bb, enc, hyp, c, f, seed).unwrap()
    }

    #[test]
    fn default_counts() {
        let h = HyperConfig::default();
        assert_eq!(h.out_dim, 4373);
        assert_eq!(h.layout().len(), h.param_count());
        assert_eq!(h.param_count(), 224_453);
        assert!((200_000..=300_000).contains(&h.param_count()));
        assert_eq!(h.out_dim * h.main_width, 209_904);
        let wide = HyperConfig { main_width: 96, ..h };
        assert_eq!(wide.out_dim * wide.main_width, 2 * 209_904);
    }

    #[test]
    fn default_model_counts_both_readings() {
        let (c, f) = unit_norms();
        let m = HyperModel::init(
            BackboneConfig::default(),
            EncoderConfig::default(),
            HyperConfig::default(),
            c,
            f,
            0,
        )
        .unwrap();
        let n = m.count_parameters();
        assert_eq!(n.backbone, 79_637);
        assert_eq!(n.hyper, 224_453);
        assert_eq!(n.encoder_and_hyper, n.encoder + n.hyper);
        assert_eq!(n.total, n.encoder_and_hyper + n.backbone);
    }

    #[test]
    fn zero_params_give_zero_delta() {
        let h = HyperConfig { in_dim: 3, out_dim: 7, ..HyperConfig::default() };
        let p = ParamVector::zeros(h.layout());
        let d = hyper_forward::<ChaCha8Rng>(&h, &p, &[1.0, -2.0, 3.0], None).unwrap();
        assert_eq!(d, vec![0.0; 7]);
    }

    #[test]
    fn fresh_init_gives_zero_delta_even_with_dropout() {
        let h = HyperConfig { in_dim: 4, out_dim: 11, ..HyperConfig::default() };
        let p = h.init_params(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = hyper_forward(&h, &p, &[0.3, 0.1, -1.0, 2.0], Some(&mut rng)).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embedding_length_checked() {
        let h = HyperConfig { in_dim: 4, out_dim: 3, ..HyperConfig::default() };
        let p = h.init_params(0);
        assert!(matches!(
            hyper_forward::<ChaCha8Rng>(&h, &p, &[1.0; 5], None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fresh_model_equals_base_backbone() {
        let m = small_model(3);
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3], [-0.9, 0.5, 0.99], [0.0, 0.0, 0.0]]).unwrap();
        let base = m.predict_base(&x).unwrap();
        for s in 0..5 {
            let y = m.predict_field(&mesh(s, 20), &x).unwrap();
            assert_eq!(y, base);
        }
    }

    #[test]
    fn prediction_is_deterministic_and_permutation_invariant() {
        let mut m = small_model(4);
        m.hyper_params = ParamVector::init_uniform(m.hyper.layout(), 9);
        let g = mesh(1, 30);
        let x = Matrix::from_rows(&[[0.5, -0.5, 0.5], [0.1, 0.1, 0.9]]).unwrap();
        let a = m.predict_field(&g, &x).unwrap();
        assert_eq!(a, m.predict_field(&g, &x).unwrap());
        let mut rev = g.clone();
        rev.vertices.reverse();
        assert_eq!(a, m.predict_field(&rev, &x).unwrap());
        assert_ne!(a, m.predict_base(&x).unwrap());
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let mut m = small_model(0);
        m.hyper.out_dim += 1;
        assert!(m.validate().is_err());
    }

    #[test]
    fn composite_gradient_reaches_all_parts() {
        let mut m = small_model(7);
        m.hyper_params = ParamVector::init_uniform(m.hyper.layout(), 2);
        let g = m.normalized_vertices(&mesh(2, 12)).unwrap();
        let x = Matrix::from_rows(&[[0.2, 0.1, -0.3], [0.5, -0.7, 0.4]]).unwrap();
        let y = Matrix::from_rows(&[[0.1; 5], [-0.2; 5]]).unwrap();
        let (l, gr) = composite_loss_grad::<ChaCha8Rng>(&m, &g, &x, &y, LossKind::Mse, None).unwrap();
        assert!(l > 0.0);
        assert_eq!(gr.encoder.len(), m.encoder_params.len());
        assert_eq!(gr.hyper.len(), m.hyper_params.len());
        assert_eq!(gr.base.len(), m.base_params.len());
        for v in [&gr.encoder, &gr.hyper, &gr.base] {
            assert!(v.iter().any(|&g| g != 0.0));
        }
    }
}
