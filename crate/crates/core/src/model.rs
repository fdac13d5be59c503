//! Trained models and their checkpoint files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{modulation_slots, BackboneConfig, ModulationLayout};
use crate::data::{self, FormatError, Normalizer};
use crate::error::{Error, Result};
use crate::geometry::EncoderConfig;
use crate::hypernet::{HyperConfig, HyperModel};
use crate::tensor::{Matrix, ParamVector};
use crate::train::predict_normalized;

/// A backbone fitted to one field, with its normalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneModel {
    pub config: BackboneConfig,
    pub params: ParamVector,
    pub coord_norm: Normalizer,
    pub feature_norm: Normalizer,
}

impl BackboneModel {
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let xn = self.coord_norm.normalize(x)?;
        let y = predict_normalized(&self.config, &self.params, &xn)?;
        self.feature_norm.denormalize(&y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Backbone(BackboneModel),
    Hyper(HyperModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Backbone(_) => "backbone",
            Model::Hyper(_) => "hyper",
        }
    }

    pub fn backbone_config(&self) -> &BackboneConfig {
        match self {
            Model::Backbone(m) => &m.config,
            Model::Hyper(m) => &m.backbone,
        }
    }

    pub fn normalizers(&self) -> (&Normalizer, &Normalizer) {
        match self {
            Model::Backbone(m) => (&m.coord_norm, &m.feature_norm),
            Model::Hyper(m) => (&m.coord_norm, &m.feature_norm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    backbone: BackboneConfig,
    encoder: Option<EncoderConfig>,
    hyper: Option<HyperConfig>,
    coord_normalizer: Normalizer,
    feature_normalizer: Normalizer,
    modulation: Option<ModulationLayout>,
    param_lengths: Vec<usize>,
    seed: u64,
    metadata: serde_json::Value,
}

/// A model plus the seed and free-form training metadata stored alongside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub seed: u64,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (coord, feat) = self.model.normalizers();
        let (encoder, hyper, modulation, vectors): (_, _, _, Vec<&[f64]>) = match &self.model {
            Model::Backbone(m) => (None, None, None, vec![m.params.as_slice()]),
            Model::Hyper(m) => (
                Some(m.encoder),
                Some(m.hyper),
                Some(modulation_slots(&m.backbone)),
                vec![m.encoder_params.as_slice(), m.hyper_params.as_slice(), m.base_params.as_slice()],
            ),
        };
        let header = Header {
            kind: self.model.kind().into(),
            backbone: *self.model.backbone_config(),
            encoder,
            hyper,
            coord_normalizer: coord.clone(),
            feature_normalizer: feat.clone(),
            modulation,
            param_lengths: vectors.iter().map(|v| v.len()).collect(),
            seed: self.seed,
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_string(&header).map_err(|e| FormatError::Header(e.to_string()))?;
        Ok(data::encode_checkpoint(&json, &vectors)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (json, payload) = data::decode_checkpoint(bytes)?;
        let h: Header = serde_json::from_str(&json).map_err(|e| FormatError::Header(e.to_string()))?;
        let total: usize = h.param_lengths.iter().sum();
        if total != payload.len() {
            return Err(FormatError::Shape(format!(
                "header lists {total} parameters, payload holds {}",
                payload.len()
            ))
            .into());
        }
        let mut parts = Vec::with_capacity(h.param_lengths.len());
        let mut start = 0;
        for len in &h.param_lengths {
            parts.push(payload[start..start + len].to_vec());
            start += len;
        }
        let shape_err = |e: Error| -> Error { FormatError::Shape(e.to_string()).into() };
        let model = match (h.kind.as_str(), parts.len()) {
            ("backbone", 1) => {
                h.backbone.validate().map_err(shape_err)?;
                let params = ParamVector::from_data(h.backbone.layout(), parts.remove(0)).map_err(shape_err)?;
                Model::Backbone(BackboneModel {
                    config: h.backbone,
                    params,
                    coord_norm: h.coord_normalizer,
                    feature_norm: h.feature_normalizer,
                })
            }
            ("hyper", 3) => {
                let (encoder, hyper) = match (h.encoder, h.hyper) {
                    (Some(e), Some(y)) => (e, y),
                    _ => return Err(FormatError::Header("hyper checkpoint lacks sub-configs".into()).into()),
                };
                let base = parts.pop().expect("three parts");
                let hyp = parts.pop().expect("three parts");
                let enc = parts.pop().expect("three parts");
                let m = HyperModel {
                    encoder_params: ParamVector::from_data(encoder.layout(), enc).map_err(shape_err)?,
                    hyper_params: ParamVector::from_data(hyper.layout(), hyp).map_err(shape_err)?,
                    base_params: ParamVector::from_data(h.backbone.layout(), base).map_err(shape_err)?,
                    backbone: h.backbone,
                    encoder,
                    hyper,
                    coord_norm: h.coord_normalizer,
                    feature_norm: h.feature_normalizer,
                };
                m.validate().map_err(shape_err)?;
                Model::Hyper(m)
            }
            (kind, n) => {
                return Err(FormatError::Header(format!("unknown model kind {kind:?} with {n} vectors")).into())
            }
        };
        Ok(Checkpoint {
            model,
            seed: h.seed,
            metadata: h.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(data::atomic_write(path, &self.to_bytes()?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
