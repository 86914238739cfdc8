//! Binary map tensor files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `b"KPTM"`                         |
//! | 4      | 4    | version (1)                             |
//! | 8      | 4    | C (channels)                            |
//! | 12     | 4    | H (rows)                                |
//! | 16     | 4    | W (cols)                                |
//! | 20     | 4    | kind: 0 heatmap, 1 center field, 2 depth|
//! | 24     | ...  | little-endian `f32` payload             |
//!
//! The payload is row-major over `[c][i][j]`; center fields append a
//! trailing component axis `[c][i][j][k]` with `k = 0` for x, `1` for y.

use std::path::Path;

use ndarray::{Array3, Array4};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"KPTM";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported tensor version {0}")]
    Version(u32),
    #[error("unknown map kind {0}")]
    Kind(u32),
    #[error("expected {expected} payload bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error("expected a {expected:?} tensor, found {found:?}")]
    WrongKind { expected: MapKind, found: MapKind },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MapKind {
    Heatmap,
    CenterField,
    Depth,
}

impl MapKind {
    pub fn code(self) -> u32 {
        match self {
            MapKind::Heatmap => 0,
            MapKind::CenterField => 1,
            MapKind::Depth => 2,
        }
    }

    pub fn from_code(code: u32) -> Result<Self, TensorError> {
        match code {
            0 => Ok(MapKind::Heatmap),
            1 => Ok(MapKind::CenterField),
            2 => Ok(MapKind::Depth),
            other => Err(TensorError::Kind(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MapKind::Heatmap => "heatmap",
            MapKind::CenterField => "center",
            MapKind::Depth => "depth",
        }
    }

    fn components(self) -> usize {
        if self == MapKind::CenterField {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub kind: MapKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn from_maps(kind: MapKind, maps: &Array3<f64>) -> Self {
        let (channels, height, width) = maps.dim();
        Self { kind, channels, height, width, data: maps.iter().map(|&v| v as f32).collect() }
    }

    pub fn from_center_field(field: &Array4<f64>) -> Self {
        let (channels, height, width, _) = field.dim();
        Self { kind: MapKind::CenterField, channels, height, width, data: field.iter().map(|&v| v as f32).collect() }
    }

    pub fn to_maps(&self) -> Result<Array3<f64>, TensorError> {
        if self.kind == MapKind::CenterField {
            return Err(TensorError::WrongKind { expected: MapKind::Heatmap, found: self.kind });
        }
        let data = self.data.iter().map(|&v| f64::from(v)).collect();
        Ok(Array3::from_shape_vec((self.channels, self.height, self.width), data).expect("length checked on decode"))
    }

    pub fn to_center_field(&self) -> Result<Array4<f64>, TensorError> {
        if self.kind != MapKind::CenterField {
            return Err(TensorError::WrongKind { expected: MapKind::CenterField, found: self.kind });
        }
        let data = self.data.iter().map(|&v| f64::from(v)).collect();
        Ok(Array4::from_shape_vec((self.channels, self.height, self.width, 2), data).expect("length checked on decode"))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&MAGIC);
        for v in [VERSION, self.channels as u32, self.height as u32, self.width as u32, self.kind.code()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < HEADER_LEN {
            return Err(TensorError::Length { expected: HEADER_LEN, found: bytes.len() });
        }
        if bytes[..4] != MAGIC {
            return Err(TensorError::BadMagic);
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
        let version = word(1);
        if version != VERSION {
            return Err(TensorError::Version(version));
        }
        let (channels, height, width) = (word(2) as usize, word(3) as usize, word(4) as usize);
        let kind = MapKind::from_code(word(5))?;
        let count = channels * height * width * kind.components();
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != 4 * count {
            return Err(TensorError::Length { expected: 4 * count, found: payload.len() });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { kind, channels, height, width, data })
    }

    pub fn write(&self, path: &Path) -> Result<(), TensorError> {
        std::fs::write(path, self.encode()).map_err(|source| TensorError::Io { path: path.display().to_string(), source })
    }

    pub fn read(path: &Path) -> Result<Self, TensorError> {
        let bytes = std::fs::read(path).map_err(|source| TensorError::Io { path: path.display().to_string(), source })?;
        Self::decode(&bytes)
    }
}
