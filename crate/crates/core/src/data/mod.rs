//! Datasets, normalization, rigid transforms, splits and file formats.

mod dataset;
mod formats;
mod manifest;
mod normalize;
mod tables;
mod transform;

use std::path::Path;

pub use dataset::{
    split_indices, split_sizes, subsample_indices, Configuration, ConfigurationSet, FieldDataset,
    FEATURE_NAMES, VY, VZ,
};
pub use formats::{
    atomic_write, decode_checkpoint, decode_fpc, decode_tsm, encode_checkpoint, encode_fpc,
    encode_tsm, FormatError, FORMAT_VERSION,
};
pub use manifest::{
    load_configurations, read_manifest, save_configurations, Manifest, ManifestEntry, MANIFEST_FILE,
};
pub use normalize::Normalizer;
pub use tables::{read_columns, read_coords, write_query, write_table, HISTORY_HEADER, QUERY_HEADER};
pub use transform::{
    augment_rotation, recenter, rotate_about_x, rotate_columns, rotate_points, RecenterRecord,
};

use crate::error::{Error, Result};
use crate::geometry::SurfaceMesh;

/// Reads an FPC file holding 3 coordinate and 5 feature columns.
pub fn read_fpc(path: &Path) -> Result<FieldDataset> {
    let ds = decode_fpc(&std::fs::read(path)?)?;
    if ds.coords.cols() != 3 || ds.features.cols() != FEATURE_NAMES.len() {
        return Err(FormatError::Shape(format!(
            "expected D_x = 3 and D_y = 5, found {} and {}",
            ds.coords.cols(),
            ds.features.cols()
        ))
        .into());
    }
    Ok(ds)
}

pub fn write_fpc(path: &Path, ds: &FieldDataset) -> Result<()> {
    Ok(atomic_write(path, &encode_fpc(ds)?)?)
}

pub fn read_tsm(path: &Path) -> Result<SurfaceMesh> {
    let mesh = decode_tsm(&std::fs::read(path)?)?;
    if mesh.vertices.is_empty() {
        return Err(Error::input(format!("{} holds an empty mesh", path.display())));
    }
    Ok(mesh)
}

pub fn write_tsm(path: &Path, mesh: &SurfaceMesh) -> Result<()> {
    Ok(atomic_write(path, &encode_tsm(mesh)?)?)
}
