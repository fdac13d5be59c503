use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::geometry::{self, DecoderConfig, EncoderConfig, SurfaceMesh};
use crate::tensor::{Matrix, ParamVector, Tape};
use crate::train::{cosine_lr, Nadam};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyBudget {
    pub epochs: usize,
    /// Decoded points per mesh per epoch.
    pub points: usize,
    pub lr: f64,
}

impl Default for StudyBudget {
    fn default() -> Self {
        Self { epochs: 100, points: 2048, lr: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingResult {
    pub dim: usize,
    /// Mean training Chamfer loss per epoch.
    pub curve: Vec<f64>,
    /// Mean Chamfer loss over all meshes after training, with fixed noise.
    pub final_loss: f64,
}

struct Reconstructor {
    encoder: Option<(EncoderConfig, ParamVector)>,
    decoder: DecoderConfig,
    decoder_params: ParamVector,
}

impl Reconstructor {
    fn new(dim: usize, encoder: &EncoderConfig, seed: u64) -> Self {
        let enc = (dim > 0).then(|| {
            let cfg = EncoderConfig { embedding_dim: dim, ..*encoder };
            let p = cfg.init_params(seed.wrapping_mul(2).wrapping_add(1));
            (cfg, p)
        });
        let decoder = DecoderConfig::new(dim);
        let decoder_params = decoder.init_params(seed.wrapping_mul(2).wrapping_add(2));
        Self { encoder: enc, decoder, decoder_params }
    }

    /// Chamfer loss of `noise.rows()` decoded points against `target`, with gradients.
    fn loss_grad(&self, target: &Matrix, noise: Matrix) -> Result<(f64, Option<Vec<f64>>, Vec<f64>)> {
        let mut tape = Tape::new();
        let enc_set = self.encoder.as_ref().map(|(_, p)| tape.param_set(p.len()));
        let dec_set = tape.param_set(self.decoder_params.len());
        let n = noise.rows();
        let noise = tape.constant(noise);
        let input = match (&self.encoder, enc_set) {
            (Some((cfg, p)), Some(set)) => {
                let e = geometry::graph(&mut tape, set, cfg, p, target)?;
                let e = tape.repeat_rows(e, n)?;
                tape.concat_cols(e, noise)?
            }
            _ => noise,
        };
        let out = geometry::decoder_graph(&mut tape, dec_set, &self.decoder, &self.decoder_params, input)?;
        let loss = tape.chamfer(out, target)?;
        let value = tape.value(loss).get(0, 0);
        let mut grads = tape.backward(loss)?;
        let ge = enc_set.map(|s| grads.take(s));
        Ok((value, ge, grads.take(dec_set)))
    }
}

fn noise<R: Rng>(n: usize, rng: &mut R) -> Matrix {
    let data = (0..3 * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(n, 3, data).expect("n × 3")
}

/// Trains an encoder and a point decoder with the Chamfer loss for each embedding
/// width in `dims` (0 meaning no embedding) and reports the reconstruction loss.
pub fn embedding_study(
    meshes: &[SurfaceMesh],
    dims: &[usize],
    encoder: &EncoderConfig,
    budget: &StudyBudget,
    seed: u64,
) -> Result<Vec<EmbeddingResult>> {
    if meshes.len() < 2 {
        return Err(Error::input("embedding study needs at least two meshes"));
    }
    if budget.epochs == 0 || budget.points == 0 || budget.lr.is_nan() || budget.lr <= 0.0 {
        return Err(Error::config("study budget needs positive epochs, points and lr"));
    }
    let mut all = Vec::new();
    for m in meshes {
        if m.vertices.is_empty() {
            return Err(Error::input("cannot reconstruct an empty mesh"));
        }
        all.extend(m.vertices.iter().copied());
    }
    let norm = Normalizer::fit(&Matrix::from_rows(&all)?)?;
    let targets: Vec<Matrix> = meshes
        .iter()
        .map(|m| norm.normalize(&m.vertex_matrix()))
        .collect::<Result<_>>()?;

    dims.iter()
        .map(|&dim| {
            let mut model = Reconstructor::new(dim, encoder, seed);
            let mut opt_enc = model.encoder.as_ref().map(|(_, p)| Nadam::new(p.len()));
            let mut opt_dec = Nadam::new(model.decoder_params.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..targets.len()).collect();
            let mut curve = Vec::with_capacity(budget.epochs);
            for epoch in 0..budget.epochs {
                let lr = cosine_lr(epoch, budget.epochs, budget.lr);
                order.shuffle(&mut rng);
                let mut sum = 0.0;
                for &i in &order {
                    let (l, ge, gd) = model.loss_grad(&targets[i], noise(budget.points, &mut rng))?;
                    sum += l;
                    if let (Some((_, p)), Some(opt), Some(g)) = (model.encoder.as_mut(), opt_enc.as_mut(), ge) {
                        opt.step(p.as_mut_slice(), &g, lr)?;
                    }
                    opt_dec.step(model.decoder_params.as_mut_slice(), &gd, lr)?;
                }
                let mean = sum / targets.len() as f64;
                if !mean.is_finite() {
                    return Err(Error::Divergence { epoch: epoch + 1, reason: format!("Chamfer loss {mean}") });
                }
                curve.push(mean);
            }
            let mut eval_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let mut total = 0.0;
            for t in &targets {
                total += model.loss_grad(t, noise(budget.points, &mut eval_rng))?.0;
            }
            Ok(EmbeddingResult { dim, curve, final_loss: total / targets.len() as f64 })
        })
        .collect()
}
