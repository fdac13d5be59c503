//! Losses, the NAdam optimizer, the cosine schedule and the two training loops.

mod backbone_loop;
mod hyper_loop;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backbone_loop::{fit_backbone, train_backbone, BackboneRun};
pub use hyper_loop::{dataset_loss, fit_normalizers, recenter_all, train_hyper, HyperRun};

use crate::backbone::{self, BackboneConfig};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, ParamVector, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::config(format!("unknown loss {other:?} (expected mae or mse)"))),
        }
    }
}

fn check_pair(pred: &Matrix, target: &Matrix) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::config(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.rows() == 0 {
        return Err(Error::input("loss of an empty batch"));
    }
    Ok(())
}

/// Mean absolute error over every entry.
pub fn mae_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    check_pair(pred, target)?;
    let s: f64 = pred.as_slice().iter().zip(target.as_slice()).map(|(p, t)| (p - t).abs()).sum();
    Ok(s / pred.as_slice().len() as f64)
}

/// Mean squared error over every entry.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    check_pair(pred, target)?;
    let s: f64 = pred.as_slice().iter().zip(target.as_slice()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / pred.as_slice().len() as f64)
}

pub fn loss(kind: LossKind, pred: &Matrix, target: &Matrix) -> Result<f64> {
    match kind {
        LossKind::Mae => mae_loss(pred, target),
        LossKind::Mse => mse_loss(pred, target),
    }
}

/// `η₀·½(1 + cos(πt/T))`, never negative.
pub fn cosine_lr(t: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = t.min(total) as f64;
    (lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t / total as f64).cos())).max(0.0)
}

/// NAdam with a constant momentum coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct Nadam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Nadam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::config(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let t = self.t as i32;
        let c1_next = 1.0 - b1.powi(t + 1);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = b1 * self.m[i] / c1_next + (1.0 - b1) * g / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub epochs: usize,
    pub lr: f64,
    /// Points per batch (backbone) or maximum points per configuration batch (hyper).
    pub batch_size: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub dropout: f64,
    /// Half-width of the rotation augmentation, degrees; 0 disables it.
    pub augment_deg: f64,
    pub subsample: f64,
}

impl TrainPlan {
    pub fn backbone() -> Self {
        Self {
            epochs: 300,
            lr: 0.01,
            batch_size: 500,
            loss: LossKind::Mae,
            seed: 0,
            dropout: 0.0,
            augment_deg: 0.0,
            subsample: 1.0,
        }
    }

    pub fn hyper() -> Self {
        Self {
            epochs: 400,
            lr: 0.001,
            batch_size: 20_000,
            dropout: 0.1,
            augment_deg: 5.0,
            ..Self::backbone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.augment_deg.is_finite() && self.augment_deg >= 0.0) {
            return Err(Error::config("augmentation range must be non-negative"));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::config(format!("subsample fraction {} outside (0, 1]", self.subsample)));
        }
        crate::tensor::check_dropout_rate(self.dropout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", crate::data::HISTORY_HEADER.join(","))?;
        for r in &self.records {
            writeln!(w, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr)?;
        }
        Ok(())
    }

    /// Equality of every logged value by bit pattern, so NaN entries compare equal.
    pub fn bitwise_eq(&self, other: &History) -> bool {
        let bits = |r: &EpochRecord| (r.epoch, r.train_loss.to_bits(), r.val_loss.to_bits(), r.lr.to_bits());
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| bits(a) == bits(b))
    }

    pub fn is_finite(&self) -> bool {
        self.records
            .iter()
            .all(|r| r.train_loss.is_finite() && (r.val_loss.is_finite() || r.val_loss.is_nan()))
    }
}

/// Aborts on a non-finite loss, or a loss above 10× the first epoch's for 20 epochs running.
#[derive(Debug, Default)]
pub(crate) struct DivergenceGuard {
    initial: Option<f64>,
    streak: usize,
}

impl DivergenceGuard {
    pub(crate) fn check(&mut self, epoch: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                reason: format!("training loss is {loss}"),
            });
        }
        let initial = *self.initial.get_or_insert(loss);
        if loss > 10.0 * initial {
            self.streak += 1;
            if self.streak >= 20 {
                return Err(Error::Divergence {
                    epoch,
                    reason: format!("loss {loss:e} above 10× initial {initial:e} for 20 epochs"),
                });
            }
        } else {
            self.streak = 0;
        }
        Ok(())
    }
}

/// Rows per gradient shard. Fixed so the reduction order never depends on the thread count.
pub const GRAD_CHUNK: usize = 512;

/// Mean loss over all entries of `x`'s predictions and its gradient for `params`.
/// Shards are evaluated in parallel and summed in index order.
pub fn backbone_loss_grad(
    cfg: &BackboneConfig,
    params: &ParamVector,
    x: &Matrix,
    target: &Matrix,
    kind: LossKind,
) -> Result<(f64, Vec<f64>)> {
    if x.rows() == 0 {
        return Err(Error::input("gradient of an empty batch"));
    }
    if target.shape() != (x.rows(), cfg.output_dim) {
        return Err(Error::config(format!(
            "target shape {:?}, expected ({}, {})",
            target.shape(),
            x.rows(),
            cfg.output_dim
        )));
    }
    let denom = (x.rows() * cfg.output_dim) as f64;
    let starts: Vec<usize> = (0..x.rows()).step_by(GRAD_CHUNK).collect();
    let shard = |&start: &usize| -> Result<(f64, Vec<f64>)> {
        let idx: Vec<usize> = (start..(start + GRAD_CHUNK).min(x.rows())).collect();
        let xs = x.select_rows(&idx);
        let ys = target.select_rows(&idx);
        let mut tape = Tape::new();
        let set = tape.param_set(params.len());
        let pred = backbone::graph(&mut tape, set, cfg, params, &xs)?;
        let l = match kind {
            LossKind::Mae => tape.abs_error(pred, &ys, denom)?,
            LossKind::Mse => tape.squared_error(pred, &ys, denom)?,
        };
        let value = tape.value(l).get(0, 0);
        let mut g = tape.backward(l)?;
        Ok((value, g.take(set)))
    };
    let parts: Vec<(f64, Vec<f64>)> = if starts.len() == 1 {
        vec![shard(&starts[0])?]
    } else {
        starts.par_iter().map(shard).collect::<Result<_>>()?
    };
    let mut iter = parts.into_iter();
    let (mut total, mut grad) = iter.next().expect("at least one shard");
    for (l, g) in iter {
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((total, grad))
}

/// Predictions in normalized units, evaluated in parallel row shards.
pub fn predict_normalized(cfg: &BackboneConfig, params: &ParamVector, x: &Matrix) -> Result<Matrix> {
    const EVAL_CHUNK: usize = 4096;
    if x.rows() <= EVAL_CHUNK {
        return backbone::forward_batch(cfg, params, x);
    }
    let starts: Vec<usize> = (0..x.rows()).step_by(EVAL_CHUNK).collect();
    let parts: Vec<Matrix> = starts
        .par_iter()
        .map(|&s| {
            let idx: Vec<usize> = (s..(s + EVAL_CHUNK).min(x.rows())).collect();
            backbone::forward_batch(cfg, params, &x.select_rows(&idx))
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(x.rows() * cfg.output_dim);
    for p in parts {
        data.extend(p.into_vec());
    }
    Matrix::from_vec(x.rows(), cfg.output_dim, data)
}
