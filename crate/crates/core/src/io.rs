//! `.mvi` container for measure-valued images and JSON sidecar helpers.
//!
//! Layout: the magic `MVI\n`, a little-endian `u32` header length, a UTF-8
//! JSON header, then `n * l` little-endian `f64` densities, voxel-major with
//! grid axes in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_grid::{Grid, GridSpec};
use crate::metric_space::{MetricSpace, SpaceTag};
use crate::models::MeasureImage;
use crate::real::Real;

pub const FORMAT_VERSION: u32 = 1;
pub const MAGIC: &[u8; 4] = b"MVI\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MviHeader {
    pub format_version: u32,
    pub grid: GridSpec,
    pub space: SpaceTag,
    pub l: usize,
    pub endianness: String,
    pub dtype: String,
}

impl MviHeader {
    pub fn for_image<T: Real>(img: &MeasureImage<T>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            grid: img.grid().spec(),
            space: img.space().tag().clone(),
            l: img.space().len(),
            endianness: "little".into(),
            dtype: "f64".into(),
        }
    }
}

/// Serializes `img` into the container bytes.
pub fn encode_mvi<T: Real>(img: &MeasureImage<T>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&MviHeader::for_image(img)).map_err(|e| Error::Format(e.to_string()))?;
    let header_len = u32::try_from(header.len()).map_err(|_| Error::Format("header too large".into()))?;
    let mut out = Vec::with_capacity(8 + header.len() + 8 * img.values().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for v in img.values() {
        out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    Ok(out)
}

/// Parses container bytes; the space is rebuilt from the header tag and every
/// row is checked against the simplex tolerance.
pub fn decode_mvi<T: Real>(bytes: &[u8]) -> Result<MeasureImage<T>> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing MVI magic".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() < header_len {
        return Err(Error::Format(format!(
            "header truncated: expected {header_len} bytes, got {}",
            body.len()
        )));
    }
    let value: serde_json::Value =
        serde_json::from_slice(&body[..header_len]).map_err(|e| Error::Format(format!("malformed header: {e}")))?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(Error::UnsupportedVersion(u32::try_from(v).unwrap_or(u32::MAX))),
        None => return Err(Error::Format("malformed header: missing format_version".into())),
    }
    let header: MviHeader =
        serde_json::from_value(value).map_err(|e| Error::Format(format!("malformed header: {e}")))?;
    if header.endianness != "little" || header.dtype != "f64" {
        return Err(Error::Format(format!(
            "unsupported encoding {}/{}",
            header.endianness, header.dtype
        )));
    }
    let space = MetricSpace::<T>::from_tag(&header.space)?;
    if header.l != space.len() {
        return Err(Error::Format(format!(
            "header l = {} but the space has {} cells",
            header.l,
            space.len()
        )));
    }
    let grid = Grid::<T>::from_spec(&header.grid)?;
    let payload = &body[header_len..];
    let want = 8 * grid.len() * space.len();
    if payload.len() != want {
        return Err(Error::Format(format!(
            "payload length: expected {want} bytes, got {}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    MeasureImage::new(grid, Arc::new(space), values)
}

pub fn write_mvi<T: Real>(img: &MeasureImage<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_mvi(img)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_mvi<T: Real>(path: impl AsRef<Path>) -> Result<MeasureImage<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mvi(&bytes)
}

/// Pretty-printed JSON for reports and sidecars.
pub fn write_json<V: Serialize>(value: &V, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<V: DeserializeOwned>(path: impl AsRef<Path>) -> Result<V> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Sidecar path for ground truth: `x.mvi` -> `x.gt.json`.
pub fn ground_truth_path(mvi: impl AsRef<Path>) -> std::path::PathBuf {
    mvi.as_ref().with_extension("gt.json")
}
