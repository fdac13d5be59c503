use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{cosine_lr, loss, predict_normalized, DivergenceGuard, EpochRecord, History, LossKind, Nadam, TrainPlan};
use crate::backbone::BackboneConfig;
use crate::data::{augment_rotation, recenter, Configuration, FieldDataset, Normalizer, RecenterRecord};
use crate::error::{Error, Result};
use crate::geometry::EncoderConfig;
use crate::hypernet::{composite_loss_grad, HyperConfig, HyperModel};
use crate::tensor::Matrix;

const ORDER_STREAM: u64 = 0xd1b5_4a32_d192_ed03;

#[derive(Debug, Clone)]
pub struct HyperRun {
    pub model: HyperModel,
    pub history: History,
    /// Validation loss of the freshly initialized model.
    pub initial_val_loss: f64,
}

/// Recenters every configuration, returning the applied motions alongside.
pub fn recenter_all(configs: &[Configuration]) -> Result<Vec<(Configuration, RecenterRecord)>> {
    configs
        .iter()
        .map(|c| {
            let (mesh, field, rec) = recenter(&c.mesh, &c.field)?;
            Ok((
                Configuration {
                    id: c.id.clone(),
                    mesh,
                    field,
                    theta: c.theta,
                },
                rec,
            ))
        })
        .collect()
}

/// Coordinate and feature normalizers over all points of `configs`.
pub fn fit_normalizers(configs: &[Configuration]) -> Result<(Normalizer, Normalizer)> {
    let n: usize = configs.iter().map(|c| c.field.len()).sum();
    let mut coords = Vec::with_capacity(3 * n);
    let mut feats = Vec::with_capacity(5 * n);
    for c in configs {
        coords.extend_from_slice(c.field.coords.as_slice());
        feats.extend_from_slice(c.field.features.as_slice());
    }
    Ok((
        Normalizer::fit(&Matrix::from_vec(n, 3, coords)?)?,
        Normalizer::fit(&Matrix::from_vec(n, 5, feats)?)?,
    ))
}

/// Point-weighted mean loss over `configs` in normalized units, eval mode.
pub fn dataset_loss(model: &HyperModel, configs: &[Configuration], kind: LossKind) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for c in configs {
        let params = model.specialise(&c.mesh)?;
        let xn = model.coord_norm.normalize(&c.field.coords)?;
        let yn = model.feature_norm.normalize(&c.field.features)?;
        let pred = predict_normalized(&model.backbone, &params, &xn)?;
        sum += loss(kind, &pred, &yn)? * c.field.len() as f64;
        n += c.field.len();
    }
    if n == 0 {
        return Ok(f64::NAN);
    }
    Ok(sum / n as f64)
}

/// End-to-end training of encoder, hyper-net and base backbone on recentered configurations.
pub fn train_hyper(
    train: &[Configuration],
    val: &[Configuration],
    plan: &TrainPlan,
    backbone: BackboneConfig,
    encoder: EncoderConfig,
    hyper: HyperConfig,
    mut progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<HyperRun> {
    plan.validate()?;
    if train.is_empty() {
        return Err(Error::input("no training configurations"));
    }
    if let Some(c) = train.iter().chain(val).find(|c| c.field.is_empty() || c.mesh.vertices.is_empty()) {
        return Err(Error::input(format!("configuration {} is empty", c.id)));
    }
    let (coord_norm, feature_norm) = fit_normalizers(train)?;
    let hyper = HyperConfig { dropout: plan.dropout, ..hyper };
    let mut model = HyperModel::init(backbone, encoder, hyper, coord_norm, feature_norm, plan.seed)?;
    let initial_val_loss = dataset_loss(&model, val, plan.loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ ORDER_STREAM);
    let mut opt_enc = Nadam::new(model.encoder_params.len());
    let mut opt_hyp = Nadam::new(model.hyper_params.len());
    let mut opt_base = Nadam::new(model.base_params.len());
    let mut guard = DivergenceGuard::default();
    let mut history = History::default();
    let total_points: usize = train.iter().map(|c| c.field.len()).sum();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let range = (-plan.augment_deg, plan.augment_deg);

    for epoch in 0..plan.epochs {
        let lr = cosine_lr(epoch, plan.epochs, plan.lr);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for &ci in &order {
            let c = &train[ci];
            let mut points: Vec<usize> = (0..c.field.len()).collect();
            points.shuffle(&mut rng);
            let batch = plan.batch_size.min(c.field.len());
            for idx in points.chunks(batch) {
                let mut ds: FieldDataset = c.field.select(idx);
                let mut mesh = c.mesh.clone();
                if plan.augment_deg > 0.0 {
                    augment_rotation(&mut ds, &mut mesh, range, &mut rng)?;
                }
                let verts = model.normalized_vertices(&mesh)?;
                let xn = model.coord_norm.normalize(&ds.coords)?;
                let yn = model.feature_norm.normalize(&ds.features)?;
                let dropout_rng = if plan.dropout > 0.0 { Some(&mut rng) } else { None };
                let (l, g) = composite_loss_grad(&model, &verts, &xn, &yn, plan.loss, dropout_rng)?;
                sum += l * idx.len() as f64;
                opt_enc.step(model.encoder_params.as_mut_slice(), &g.encoder, lr)?;
                opt_hyp.step(model.hyper_params.as_mut_slice(), &g.hyper, lr)?;
                opt_base.step(model.base_params.as_mut_slice(), &g.base, lr)?;
            }
        }
        let train_loss = sum / total_points as f64;
        guard.check(epoch + 1, train_loss)?;
        let val_loss = dataset_loss(&model, val, plan.loss)?;
        let rec = EpochRecord { epoch: epoch + 1, train_loss, val_loss, lr };
        if let Some(p) = progress.as_mut() {
            p(&rec);
        }
        history.records.push(rec);
    }
    Ok(HyperRun {
        model,
        history,
        initial_val_loss,
    })
}
