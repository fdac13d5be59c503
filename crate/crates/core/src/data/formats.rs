//! Binary containers: flow point clouds (FPC), surface meshes (TSM) and weight
//! checkpoints (INRW). All integers and floats are little-endian.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::dataset::FieldDataset;
use crate::geometry::SurfaceMesh;
use crate::tensor::Matrix;

pub const FPC_MAGIC: &[u8; 4] = b"FPC1";
pub const TSM_MAGIC: &[u8; 4] = b"TSM1";
pub const CKPT_MAGIC: &[u8; 4] = b"INRW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: Vec<u8> },
    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingData(usize),
    #[error("triangle {triangle} references vertex {index} of {vertices}")]
    InvalidIndex { triangle: usize, index: u32, vertices: usize },
    #[error("unexpected dimensions: {0}")]
    Shape(String),
    #[error("malformed header: {0}")]
    Header(String),
}

type FResult<T> = std::result::Result<T, FormatError>;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> FResult<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated { needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> FResult<()> {
        let found = if self.buf.len() - self.pos < 4 {
            self.buf[self.pos..].to_vec()
        } else {
            self.take(4)?.to_vec()
        };
        if found != expected {
            return Err(FormatError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found,
            });
        }
        Ok(())
    }

    fn u32(&mut self) -> FResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> FResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn version(&mut self) -> FResult<()> {
        let found = self.u32()?;
        if found != FORMAT_VERSION {
            return Err(FormatError::VersionMismatch { found, expected: FORMAT_VERSION });
        }
        Ok(())
    }

    /// Byte count for `count` elements of `width` bytes, guarding against overflow.
    fn span(&self, count: u64, width: usize) -> FResult<usize> {
        let available = self.buf.len() - self.pos;
        usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(width))
            .ok_or(FormatError::Truncated { needed: usize::MAX, available })
    }

    fn f32s(&mut self, count: u64) -> FResult<Vec<f64>> {
        let n = self.span(count, 4)?;
        let bytes = self.take(n)?;
        bytes
            .chunks_exact(4)
            .enumerate()
            .map(|(index, c)| {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if v.is_finite() {
                    Ok(v as f64)
                } else {
                    Err(FormatError::NonFinite { index })
                }
            })
            .collect()
    }

    fn f64s(&mut self, count: u64) -> FResult<Vec<f64>> {
        let n = self.span(count, 8)?;
        let bytes = self.take(n)?;
        bytes
            .chunks_exact(8)
            .enumerate()
            .map(|(index, c)| {
                let v = f64::from_le_bytes(c.try_into().unwrap());
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(FormatError::NonFinite { index })
                }
            })
            .collect()
    }

    fn finish(&self) -> FResult<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingData(n)),
        }
    }
}

fn f32_checked(values: &[f64]) -> FResult<Vec<u8>> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for (index, &v) in values.iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(FormatError::NonFinite { index });
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

/// Encodes a dataset as FPC. Values are stored as f32.
pub fn encode_fpc(ds: &FieldDataset) -> FResult<Vec<u8>> {
    let (dx, dy) = (ds.coords.cols(), ds.features.cols());
    let mut rows = Vec::with_capacity(ds.len() * (dx + dy));
    for (c, f) in ds.coords.row_iter().zip(ds.features.row_iter()) {
        rows.extend_from_slice(c);
        rows.extend_from_slice(f);
    }
    let mut out = Vec::with_capacity(24 + rows.len() * 4);
    out.extend_from_slice(FPC_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dx as u32).to_le_bytes());
    out.extend_from_slice(&(dy as u32).to_le_bytes());
    out.extend(f32_checked(&rows)?);
    Ok(out)
}

pub fn decode_fpc(buf: &[u8]) -> FResult<FieldDataset> {
    let mut r = Reader::new(buf);
    r.magic(FPC_MAGIC)?;
    r.version()?;
    let n = r.u64()?;
    let dx = r.u32()? as usize;
    let dy = r.u32()? as usize;
    if dx == 0 || dy == 0 {
        return Err(FormatError::Shape(format!("D_x = {dx}, D_y = {dy}")));
    }
    let width = (dx + dy) as u64;
    let values = r.f32s(n.checked_mul(width).ok_or(FormatError::Shape("row count overflows".into()))?)?;
    r.finish()?;
    let n = n as usize;
    let mut coords = Vec::with_capacity(n * dx);
    let mut features = Vec::with_capacity(n * dy);
    for row in values.chunks_exact(dx + dy) {
        coords.extend_from_slice(&row[..dx]);
        features.extend_from_slice(&row[dx..]);
    }
    Ok(FieldDataset {
        coords: Matrix::from_vec(n, dx, coords).expect("sized above"),
        features: Matrix::from_vec(n, dy, features).expect("sized above"),
    })
}

pub fn encode_tsm(mesh: &SurfaceMesh) -> FResult<Vec<u8>> {
    let mut out = Vec::with_capacity(24 + mesh.vertices.len() * 12 + mesh.triangles.len() * 12);
    out.extend_from_slice(TSM_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(mesh.vertices.len() as u64).to_le_bytes());
    out.extend_from_slice(&(mesh.triangles.len() as u64).to_le_bytes());
    let flat: Vec<f64> = mesh.vertices.iter().flatten().copied().collect();
    out.extend(f32_checked(&flat)?);
    for t in &mesh.triangles {
        for i in t {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_tsm(buf: &[u8]) -> FResult<SurfaceMesh> {
    let mut r = Reader::new(buf);
    r.magic(TSM_MAGIC)?;
    r.version()?;
    let v = r.u64()?;
    let t = r.u64()?;
    let flat = r.f32s(v.checked_mul(3).ok_or(FormatError::Shape("vertex count overflows".into()))?)?;
    let n = r.span(t, 12)?;
    let idx = r.take(n)?;
    r.finish()?;
    let vertices: Vec<[f64; 3]> = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let mut triangles = Vec::with_capacity(t as usize);
    for (triangle, c) in idx.chunks_exact(12).enumerate() {
        let tri = [0, 1, 2].map(|k| u32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap()));
        if let Some(&index) = tri.iter().find(|&&i| i as usize >= vertices.len()) {
            return Err(FormatError::InvalidIndex { triangle, index, vertices: vertices.len() });
        }
        triangles.push(tri);
    }
    Ok(SurfaceMesh { vertices, triangles })
}

/// INRW container: JSON header followed by f64 vectors whose lengths the header lists.
pub fn encode_checkpoint(header_json: &str, vectors: &[&[f64]]) -> FResult<Vec<u8>> {
    let total: usize = vectors.iter().map(|v| v.len()).sum();
    let mut out = Vec::with_capacity(12 + header_json.len() + 8 * total);
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let len = u32::try_from(header_json.len()).map_err(|_| FormatError::Header("header too large".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(header_json.as_bytes());
    let mut index = 0;
    for v in vectors {
        for &x in *v {
            if !x.is_finite() {
                return Err(FormatError::NonFinite { index });
            }
            out.extend_from_slice(&x.to_le_bytes());
            index += 1;
        }
    }
    Ok(out)
}

/// Returns the header text and the concatenated parameter payload.
pub fn decode_checkpoint(buf: &[u8]) -> FResult<(String, Vec<f64>)> {
    let mut r = Reader::new(buf);
    r.magic(CKPT_MAGIC)?;
    r.version()?;
    let len = r.u32()? as usize;
    let header = std::str::from_utf8(r.take(len)?)
        .map_err(|e| FormatError::Header(e.to_string()))?
        .to_owned();
    let rest = buf.len() - r.pos;
    if !rest.is_multiple_of(8) {
        return Err(FormatError::Truncated { needed: rest.next_multiple_of(8), available: rest });
    }
    let payload = r.f64s((rest / 8) as u64)?;
    r.finish()?;
    Ok((header, payload))
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}
