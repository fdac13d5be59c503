use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    backbone_loss_grad, cosine_lr, loss, predict_normalized, DivergenceGuard, EpochRecord, History,
    LossKind, Nadam, TrainPlan,
};
use crate::backbone::BackboneConfig;
use crate::data::{FieldDataset, Normalizer};
use crate::error::{Error, Result};
use crate::model::BackboneModel;
use crate::tensor::Matrix;

const SHUFFLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Outcome of [`train_backbone`]. MAEs are in normalized units.
#[derive(Debug, Clone)]
pub struct BackboneRun {
    pub model: BackboneModel,
    pub history: History,
    pub train: FieldDataset,
    pub val: FieldDataset,
    pub test: FieldDataset,
    pub train_mae: f64,
    pub val_mae: f64,
    pub test_mae: f64,
}

/// Normalized MAE of `model` on `ds`; NaN when `ds` is empty.
pub(crate) fn normalized_mae(model: &BackboneModel, ds: &FieldDataset) -> Result<f64> {
    normalized_loss(model, ds, LossKind::Mae)
}

fn normalized_loss(model: &BackboneModel, ds: &FieldDataset, kind: LossKind) -> Result<f64> {
    if ds.is_empty() {
        return Ok(f64::NAN);
    }
    let xn = model.coord_norm.normalize(&ds.coords)?;
    let yn = model.feature_norm.normalize(&ds.features)?;
    loss(kind, &predict_normalized(&model.config, &model.params, &xn)?, &yn)
}

/// Splits 80/20 into train+val and test, then 90/10 into train and val; fits the
/// normalizers on the training part, subsamples it if the plan asks, and trains.
pub fn train_backbone(
    ds: &FieldDataset,
    plan: &TrainPlan,
    cfg: &BackboneConfig,
    progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<BackboneRun> {
    plan.validate()?;
    let mut outer = ds.split(&[0.8, 0.2], plan.seed)?;
    let test = outer.pop().expect("two parts");
    let mut inner = outer.pop().expect("two parts").split(&[0.9, 0.1], plan.seed.wrapping_add(1))?;
    let val = inner.pop().expect("two parts");
    let full_train = inner.pop().expect("two parts");
    let coord_norm = Normalizer::fit(&full_train.coords)?;
    let feature_norm = Normalizer::fit(&full_train.features)?;
    let train = if plan.subsample < 1.0 {
        full_train.subsample(plan.subsample, plan.seed.wrapping_add(2))?
    } else {
        full_train
    };
    let (model, history) = fit_backbone(&train, Some(&val), plan, cfg, coord_norm, feature_norm, progress)?;
    Ok(BackboneRun {
        train_mae: normalized_mae(&model, &train)?,
        val_mae: normalized_mae(&model, &val)?,
        test_mae: normalized_mae(&model, &test)?,
        model,
        history,
        train,
        val,
        test,
    })
}

/// Trains a fresh backbone on `train` with fixed normalizers.
pub fn fit_backbone(
    train: &FieldDataset,
    val: Option<&FieldDataset>,
    plan: &TrainPlan,
    cfg: &BackboneConfig,
    coord_norm: Normalizer,
    feature_norm: Normalizer,
    mut progress: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<(BackboneModel, History)> {
    plan.validate()?;
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::input("training set is empty"));
    }
    let xn = coord_norm.normalize(&train.coords)?;
    let yn = feature_norm.normalize(&train.features)?;
    let mut model = BackboneModel {
        config: *cfg,
        params: cfg.init_params(plan.seed),
        coord_norm,
        feature_norm,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ SHUFFLE_STREAM);
    let mut opt = Nadam::new(model.params.len());
    let mut guard = DivergenceGuard::default();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..plan.epochs {
        let lr = cosine_lr(epoch, plan.epochs, plan.lr);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for batch in order.chunks(plan.batch_size) {
            let xb: Matrix = xn.select_rows(batch);
            let yb = yn.select_rows(batch);
            let (l, g) = backbone_loss_grad(cfg, &model.params, &xb, &yb, plan.loss)?;
            sum += l * batch.len() as f64;
            opt.step(model.params.as_mut_slice(), &g, lr)?;
        }
        let train_loss = sum / train.len() as f64;
        guard.check(epoch + 1, train_loss)?;
        let val_loss = match val {
            Some(v) => normalized_loss(&model, v, plan.loss)?,
            None => f64::NAN,
        };
        let rec = EpochRecord { epoch: epoch + 1, train_loss, val_loss, lr };
        if let Some(p) = progress.as_mut() {
            p(&rec);
        }
        history.records.push(rec);
    }
    if !model.params.is_finite() {
        return Err(Error::Divergence {
            epoch: plan.epochs,
            reason: "parameters became non-finite".into(),
        });
    }
    Ok((model, history))
}
