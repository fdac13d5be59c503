//! Central-difference checks of the reverse-mode gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::data::Normalizer;
use crate::encoding::PositionalEncoder;
use crate::error::{Error, Result};
use crate::geometry::{self, EncoderConfig};
use crate::hypernet::{self, composite_loss_grad, HyperConfig, HyperModel};
use crate::tensor::{Matrix, Tape};
use crate::train::{backbone_loss_grad, LossKind};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error, so near-zero gradients are compared absolutely.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    /// Shrunken networks, every parameter checked.
    Small,
    /// Default widths, a random subset of parameters checked.
    Default,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Scale::Small),
            "default" => Ok(Scale::Default),
            other => Err(Error::config(format!("unknown gradcheck scale {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub cases: Vec<CaseReport>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

struct Tracker {
    checked: usize,
    worst: f64,
    at: String,
}

impl Tracker {
    fn new() -> Self {
        Self { checked: 0, worst: 0.0, at: String::new() }
    }

    /// Compares `analytic[i]` against a central difference for every `i` in `indices`.
    fn probe<F>(&mut self, label: &str, values: &[f64], analytic: &[f64], indices: &[usize], mut f: F) -> Result<()>
    where
        F: FnMut(&[f64]) -> Result<f64>,
    {
        let mut buf = values.to_vec();
        for &i in indices {
            let orig = buf[i];
            buf[i] = orig + STEP;
            let up = f(&buf)?;
            buf[i] = orig - STEP;
            let down = f(&buf)?;
            buf[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let err = relative_error(analytic[i], numeric);
            if !err.is_finite() {
                return Err(Error::Divergence { epoch: 0, reason: format!("non-finite gradient at {label}[{i}]") });
            }
            self.checked += 1;
            if err > self.worst || self.at.is_empty() {
                self.worst = err;
                self.at = format!("{label}[{i}]");
            }
        }
        Ok(())
    }

    fn report(self, name: &str) -> CaseReport {
        CaseReport { name: name.into(), checked: self.checked, max_rel_error: self.worst, worst: self.at }
    }
}

fn indices(len: usize, scale: Scale, rng: &mut ChaCha8Rng) -> Vec<usize> {
    const SUBSET: usize = 48;
    match scale {
        Scale::Small => (0..len).collect(),
        Scale::Default if len <= SUBSET => (0..len).collect(),
        Scale::Default => {
            let mut v = sample(rng, len, SUBSET).into_vec();
            v.sort_unstable();
            v
        }
    }
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

fn configs(scale: Scale) -> (BackboneConfig, EncoderConfig, HyperConfig) {
    match scale {
        Scale::Small => {
            let bb = BackboneConfig {
                hidden: 8,
                depth: 2,
                encoder: PositionalEncoder { levels: 2, ..Default::default() },
                ..Default::default()
            };
            let enc = EncoderConfig { main_width: 8, residual_width: 16, residual_blocks: 1, embedding_dim: 4, ..Default::default() };
            let hyp = HyperConfig { main_width: 8, residual_width: 16, ..HyperConfig::for_backbone(&bb, 4) };
            (bb, enc, hyp)
        }
        Scale::Default => {
            let bb = BackboneConfig::default();
            (bb, EncoderConfig::default(), HyperConfig::for_backbone(&bb, 16))
        }
    }
}

/// A model whose output layer is randomized so every path carries gradient.
fn live_model(scale: Scale, dropout: f64, rng: &mut ChaCha8Rng) -> Result<HyperModel> {
    let (bb, enc, hyp) = configs(scale);
    let cn = Normalizer::new(vec![-1.0; 3], vec![1.0; 3])?;
    let fnorm = Normalizer::new(vec![-1.0; 5], vec![1.0; 5])?;
    let mut m = HyperModel::init(bb, enc, HyperConfig { dropout, ..hyp }, cn, fnorm, rng.random())?;
    let bound = 1.0 / (m.hyper.main_width as f64).sqrt();
    for name in ["W_out", "b_out"] {
        for v in m.hyper_params.slice_mut(name)? {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(m)
}

fn backbone_case(scale: Scale, rng: &mut ChaCha8Rng) -> Result<CaseReport> {
    let (cfg, _, _) = configs(scale);
    let params = cfg.init_params(rng.random());
    let x = uniform(40, 3, -1.0, 1.0, rng);
    let y = uniform(40, cfg.output_dim, -1.0, 1.0, rng);
    let (_, grad) = backbone_loss_grad(&cfg, &params, &x, &y, LossKind::Mse)?;
    let idx = indices(params.len(), scale, rng);
    let mut t = Tracker::new();
    let mut p = params.clone();
    t.probe("backbone", params.as_slice(), &grad, &idx, |v| {
        p.as_mut_slice().copy_from_slice(v);
        Ok(backbone_loss_grad(&cfg, &p, &x, &y, LossKind::Mse)?.0)
    })?;
    Ok(t.report("backbone (mse)"))
}

/// Scalar ⟨delta, r⟩ through the encoder and the hyper-net.
fn encoder_hyper_case(scale: Scale, rng: &mut ChaCha8Rng) -> Result<CaseReport> {
    let m = live_model(scale, 0.0, rng)?;
    let verts = uniform(24, 3, -1.0, 1.0, rng);
    let r: Vec<f64> = (0..m.hyper.out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |enc: &[f64], hyp: &[f64]| -> Result<f64> {
        let mut ep = m.encoder_params.clone();
        ep.as_mut_slice().copy_from_slice(enc);
        let mut hp = m.hyper_params.clone();
        hp.as_mut_slice().copy_from_slice(hyp);
        let theta = geometry::encode_vertices(&m.encoder, &ep, &verts)?;
        let delta = hypernet::hyper_forward::<ChaCha8Rng>(&m.hyper, &hp, &theta, None)?;
        Ok(delta.iter().zip(&r).map(|(a, b)| a * b).sum())
    };
    let mut tape = Tape::new();
    let es = tape.param_set(m.encoder_params.len());
    let hs = tape.param_set(m.hyper_params.len());
    let theta = geometry::graph(&mut tape, es, &m.encoder, &m.encoder_params, &verts)?;
    let delta = hypernet::graph::<ChaCha8Rng>(&mut tape, hs, &m.hyper, &m.hyper_params, theta, None)?;
    let mut g = tape.backward_seeded(delta, Matrix::row_vector(r.clone()))?;
    let (ge, gh) = (g.take(es), g.take(hs));
    let (enc, hyp) = (m.encoder_params.as_slice(), m.hyper_params.as_slice());
    let mut t = Tracker::new();
    let idx = indices(enc.len(), scale, rng);
    t.probe("encoder", enc, &ge, &idx, |v| objective(v, hyp))?;
    let idx = indices(hyp.len(), scale, rng);
    t.probe("hyper", hyp, &gh, &idx, |v| objective(enc, v))?;
    Ok(t.report("encoder+hyper"))
}

/// Full loss: mesh → encoder → hyper-net (with a fixed dropout mask) → backbone.
fn end_to_end_case(scale: Scale, rng: &mut ChaCha8Rng) -> Result<CaseReport> {
    let m = live_model(scale, 0.1, rng)?;
    let verts = uniform(24, 3, -1.0, 1.0, rng);
    let x = uniform(32, 3, -1.0, 1.0, rng);
    let y = uniform(32, m.backbone.output_dim, -1.0, 1.0, rng);
    let mask_seed: u64 = rng.random();
    let run = |model: &HyperModel| {
        let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
        composite_loss_grad(model, &verts, &x, &y, LossKind::Mse, Some(&mut r))
    };
    let (_, grads) = run(&m)?;
    let mut t = Tracker::new();
    let mut probe = m.clone();
    let idx = indices(m.encoder_params.len(), scale, rng);
    t.probe("encoder", m.encoder_params.as_slice(), &grads.encoder, &idx, |v| {
        probe.encoder_params.as_mut_slice().copy_from_slice(v);
        Ok(run(&probe)?.0)
    })?;
    probe.encoder_params = m.encoder_params.clone();
    let idx = indices(m.hyper_params.len(), scale, rng);
    t.probe("hyper", m.hyper_params.as_slice(), &grads.hyper, &idx, |v| {
        probe.hyper_params.as_mut_slice().copy_from_slice(v);
        Ok(run(&probe)?.0)
    })?;
    probe.hyper_params = m.hyper_params.clone();
    let idx = indices(m.base_params.len(), scale, rng);
    t.probe("base", m.base_params.as_slice(), &grads.base, &idx, |v| {
        probe.base_params.as_mut_slice().copy_from_slice(v);
        Ok(run(&probe)?.0)
    })?;
    Ok(t.report("end-to-end (mse, dropout)"))
}

pub fn gradcheck(scale: Scale, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(GradcheckReport {
        cases: vec![
            backbone_case(scale, &mut rng)?,
            encoder_hyper_case(scale, &mut rng)?,
            end_to_end_case(scale, &mut rng)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_scale_passes() {
        let r = gradcheck(Scale::Small, 7).unwrap();
        for c in &r.cases {
            assert!(c.checked > 0);
            assert!(c.max_rel_error < TOLERANCE, "{c:?}");
        }
        assert!(r.passed());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-15);
    }
}
