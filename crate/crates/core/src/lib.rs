//! Implicit neural representations of 3D flow fields.
//!
//! A coordinate MLP (the backbone) regresses `[ρ, p, V_x, V_y, V_z]` from a position.
//! A point-cloud encoder and a residual hyper-net map a surface mesh to additive
//! changes of the backbone's biases and outer weight matrices, so one forward pass
//! yields the field for a new geometry.

pub mod backbone;
pub mod data;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod hypernet;
pub mod model;
pub mod oracle;
pub mod tensor;
pub mod train;

pub use backbone::{Backbone, BackboneConfig, ModulationLayout};
pub use data::{Configuration, ConfigurationSet, FieldDataset, Normalizer};
pub use encoding::PositionalEncoder;
pub use error::{Error, Result};
pub use eval::{Metrics, SliceSpec};
pub use geometry::{EncoderConfig, SurfaceMesh};
pub use gradcheck::{GradcheckReport, Scale};
pub use hypernet::{HyperConfig, HyperModel, ParameterCounts};
pub use model::{BackboneModel, Checkpoint, Model};
pub use oracle::OracleParams;
pub use tensor::{Layout, Matrix, ParamVector};
pub use train::{History, LossKind, TrainPlan};
