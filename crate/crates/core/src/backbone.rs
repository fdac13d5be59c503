//! The coordinate MLP mapping a position to its flow features.
//!
//! `z₀ = W_in [PE(x) ‖ x] + b_in`, `z_k = GELU(W_k z_{k−1} + b_k)` for
//! `k = 1..K`, `ŷ = W_out z_K + b_out`. The first transformation carries no
//! activation.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::encoding::PositionalEncoder;
use crate::error::{Error, Result};
use crate::tensor::{gelu, Layout, Matrix, ParamSet, ParamVector, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub encoder: PositionalEncoder,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            input_dim: 3,
            output_dim: 5,
            hidden: 112,
            depth: 6,
            encoder: PositionalEncoder::default(),
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.depth == 0 {
            return Err(Error::config(format!(
                "backbone needs hidden ≥ 1 and depth ≥ 1, got {} and {}",
                self.hidden, self.depth
            )));
        }
        if self.encoder.input_dim != self.input_dim {
            return Err(Error::config(format!(
                "encoder input dimension {} differs from backbone input {}",
                self.encoder.input_dim, self.input_dim
            )));
        }
        self.encoder.validate()
    }

    /// Canonical order: W_in, b_in, (W_k, b_k) for k = 1..K, W_out, b_out.
    pub fn layout(&self) -> Layout {
        let h = self.hidden;
        let mut l = Layout::new();
        l.weight("W_in", h, self.encoder.output_dim()).bias("b_in", h);
        for k in 1..=self.depth {
            l.weight(format!("W_{k}"), h, h).bias(format!("b_{k}"), h);
        }
        l.weight("W_out", self.output_dim, h).bias("b_out", self.output_dim);
        l
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (h, e, k, dy) = (
            self.hidden,
            self.encoder.output_dim(),
            self.depth,
            self.output_dim,
        );
        h * e + h + k * (h * h + h) + dy * h + dy
    }

    pub fn init_params(&self, seed: u64) -> ParamVector {
        ParamVector::init_uniform(self.layout(), seed)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::config(format!(
                "backbone expects {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        Ok(())
    }
}

pub fn forward(cfg: &BackboneConfig, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(forward_batch(cfg, params, &xm)?.into_vec())
}

/// Row-wise forward pass over an `N × D_x` matrix of normalized coordinates.
pub fn forward_batch(cfg: &BackboneConfig, params: &ParamVector, x: &Matrix) -> Result<Matrix> {
    cfg.check_params(params)?;
    let enc = cfg.encoder.encode_batch(x)?;
    let mut z = enc.matmul_t(&params.matrix("W_in")?)?;
    z.add_row_broadcast(params.slice("b_in")?)?;
    for k in 1..=cfg.depth {
        z = z.matmul_t(&params.matrix(&format!("W_{k}"))?)?;
        z.add_row_broadcast(params.slice(&format!("b_{k}"))?)?;
        z.map_inplace(gelu);
    }
    let mut y = z.matmul_t(&params.matrix("W_out")?)?;
    y.add_row_broadcast(params.slice("b_out")?)?;
    Ok(y)
}

/// Records the forward pass on `tape`; returns the `N × D_y` output node.
pub fn graph(
    tape: &mut Tape,
    set: ParamSet,
    cfg: &BackboneConfig,
    params: &ParamVector,
    x: &Matrix,
) -> Result<Var> {
    cfg.check_params(params)?;
    let enc = tape.constant(cfg.encoder.encode_batch(x)?);
    let w = tape.param(set, params, "W_in")?;
    let b = tape.param(set, params, "b_in")?;
    let mut z = tape.linear(enc, w, b)?;
    for k in 1..=cfg.depth {
        let w = tape.param(set, params, &format!("W_{k}"))?;
        let b = tape.param(set, params, &format!("b_{k}"))?;
        let h = tape.linear(z, w, b)?;
        z = tape.gelu(h);
    }
    let w = tape.param(set, params, "W_out")?;
    let b = tape.param(set, params, "b_out")?;
    tape.linear(z, w, b)
}

/// A contiguous run of backbone parameters driven by the hyper-net.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModulatedSlot {
    pub name: String,
    /// Offset into the backbone parameter vector.
    pub param_offset: usize,
    /// Offset into the delta vector.
    pub delta_offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModulationLayout {
    pub slots: Vec<ModulatedSlot>,
    pub total: usize,
    pub bias_total: usize,
}

impl ModulationLayout {
    /// Picks the modulated entries out of a full backbone-shaped vector.
    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total);
        for s in &self.slots {
            out.extend_from_slice(&full[s.param_offset..s.param_offset + s.len]);
        }
        out
    }
}

/// Biases `b_in, b_1..b_K, b_out`, then `W_in`, then `W_out`.
pub fn modulation_slots(cfg: &BackboneConfig) -> ModulationLayout {
    let layout = cfg.layout();
    let mut names = vec!["b_in".to_string()];
    names.extend((1..=cfg.depth).map(|k| format!("b_{k}")));
    names.push("b_out".into());
    let n_bias = names.len();
    names.push("W_in".into());
    names.push("W_out".into());

    let mut slots = Vec::with_capacity(names.len());
    let mut cursor = 0;
    let mut bias_total = 0;
    for (i, name) in names.into_iter().enumerate() {
        let s = layout.slot(&name).expect("canonical slot exists");
        if i < n_bias {
            bias_total += s.len();
        }
        slots.push(ModulatedSlot {
            name,
            param_offset: s.offset,
            delta_offset: cursor,
            len: s.len(),
        });
        cursor += s.len();
    }
    ModulationLayout {
        slots,
        total: cursor,
        bias_total,
    }
}

/// `base` with every modulated slot incremented by its share of `delta`.
pub fn apply_deltas(cfg: &BackboneConfig, base: &ParamVector, delta: &[f64]) -> Result<ParamVector> {
    cfg.check_params(base)?;
    let m = modulation_slots(cfg);
    if delta.len() != m.total {
        return Err(Error::config(format!(
            "delta has {} values, modulation layout needs {}",
            delta.len(),
            m.total
        )));
    }
    let mut out = base.clone();
    let data = out.as_mut_slice();
    for s in &m.slots {
        let dst = &mut data[s.param_offset..s.param_offset + s.len];
        for (p, d) in dst.iter_mut().zip(&delta[s.delta_offset..s.delta_offset + s.len]) {
            *p += d;
        }
    }
    Ok(out)
}

/// A backbone bound to its parameters, counting queries outside `[−1, 1]^D`.
#[derive(Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub params: ParamVector,
    extrapolated: AtomicU64,
}

impl Backbone {
    pub fn new(config: BackboneConfig, params: ParamVector) -> Result<Self> {
        config.validate()?;
        config.check_params(&params)?;
        Ok(Self {
            config,
            params,
            extrapolated: AtomicU64::new(0),
        })
    }

    /// Evaluates without clamping; out-of-range rows bump the warning counter.
    pub fn forward_batch(&self, x: &Matrix) -> Result<Matrix> {
        let outside = x
            .row_iter()
            .filter(|r| r.iter().any(|v| v.abs() > 1.0))
            .count();
        self.extrapolated.fetch_add(outside as u64, Ordering::Relaxed);
        forward_batch(&self.config, &self.params, x)
    }

    pub fn extrapolated_queries(&self) -> u64 {
        self.extrapolated.load(Ordering::Relaxed)
    }
}
