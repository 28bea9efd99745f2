//! The `A2XVOL1` container: an 8-byte magic, a little-endian `u32` header
//! length, a UTF-8 JSON header and a raw little-endian payload.
//!
//! ```text
//! +----------------+---------------+-------------+------------------------+
//! | "A2XVOL1\0"    | header_len u32| JSON header | payload (f32 LE or u8) |
//! +----------------+---------------+-------------+------------------------+
//! ```
//!
//! The payload length must equal the size implied by the header exactly.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{ClassMask, Dims, LogitField, Volume, VolumeError};

pub const MAGIC: &[u8; 8] = b"A2XVOL1\0";

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated container: {0}")]
    Truncated(&'static str),
    #[error("size mismatch: header implies {expected} payload bytes, found {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("invalid payload: {0}")]
    Payload(#[from] VolumeError),
    #[error("expected a {expected} container, found {found}")]
    WrongKind { expected: &'static str, found: &'static str },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Volume,
    Logits,
    Mask,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Volume => "volume",
            Kind::Logits => "logits",
            Kind::Mask => "mask",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: Kind,
    pub dims: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    pub spacing: Option<[f64; 3]>,
    pub dtype: Dtype,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl Header {
    fn payload_len(&self) -> Result<usize, ContainerError> {
        let voxels = Dims(self.dims).len();
        match (self.kind, self.dtype) {
            (Kind::Volume, Dtype::F32) => Ok(voxels * 4),
            (Kind::Logits, Dtype::F32) => {
                let l = self
                    .num_classes
                    .ok_or_else(|| ContainerError::Header("logits header lacks num_classes".into()))?;
                Ok(voxels * l * 4)
            }
            (Kind::Mask, Dtype::U8) => Ok(voxels),
            (kind, dtype) => Err(ContainerError::Header(format!("dtype {dtype:?} invalid for kind {}", kind.name()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Volume(Volume),
    Logits(LogitField),
    Mask(ClassMask),
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Volume(_) => Kind::Volume,
            Payload::Logits(_) => Kind::Logits,
            Payload::Mask(_) => Kind::Mask,
        }
    }
}

impl From<Volume> for Payload {
    fn from(v: Volume) -> Self {
        Payload::Volume(v)
    }
}

impl From<LogitField> for Payload {
    fn from(v: LogitField) -> Self {
        Payload::Logits(v)
    }
}

impl From<ClassMask> for Payload {
    fn from(v: ClassMask) -> Self {
        Payload::Mask(v)
    }
}

/// A decoded container: the payload plus whatever free-form metadata the header carried.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub payload: Payload,
    pub meta: Option<serde_json::Value>,
}

impl Container {
    pub fn new(payload: impl Into<Payload>) -> Self {
        Container { payload: payload.into(), meta: None }
    }

    pub fn with_meta(mut self, meta: serde_json::Value) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn into_volume(self) -> Result<Volume, ContainerError> {
        match self.payload {
            Payload::Volume(v) => Ok(v),
            other => Err(ContainerError::WrongKind { expected: "volume", found: other.kind().name() }),
        }
    }

    pub fn into_logits(self) -> Result<LogitField, ContainerError> {
        match self.payload {
            Payload::Logits(v) => Ok(v),
            other => Err(ContainerError::WrongKind { expected: "logits", found: other.kind().name() }),
        }
    }

    pub fn into_mask(self) -> Result<ClassMask, ContainerError> {
        match self.payload {
            Payload::Mask(v) => Ok(v),
            other => Err(ContainerError::WrongKind { expected: "mask", found: other.kind().name() }),
        }
    }

    pub fn header(&self) -> Header {
        let (kind, dims, num_classes, spacing, dtype) = match &self.payload {
            Payload::Volume(v) => (Kind::Volume, v.dims(), None, v.spacing(), Dtype::F32),
            Payload::Logits(l) => (Kind::Logits, l.dims(), Some(l.num_classes()), None, Dtype::F32),
            Payload::Mask(m) => (Kind::Mask, m.dims(), None, None, Dtype::U8),
        };
        Header { kind, dims: dims.0, num_classes, spacing, dtype, meta: self.meta.clone() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        match &self.payload {
            Payload::Volume(v) => extend_f32(&mut out, v.data()),
            Payload::Logits(l) => extend_f32(&mut out, l.data()),
            Payload::Mask(m) => out.extend_from_slice(m.data()),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < MAGIC.len() {
            return Err(ContainerError::Truncated("missing magic"));
        }
        if &bytes[..8] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let len_bytes = bytes.get(8..12).ok_or(ContainerError::Truncated("missing header length"))?;
        let header_len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        let header_bytes = bytes
            .get(12..12 + header_len)
            .ok_or(ContainerError::Truncated("header shorter than declared"))?;
        let header: Header =
            serde_json::from_slice(header_bytes).map_err(|e| ContainerError::Header(e.to_string()))?;
        let payload = &bytes[12 + header_len..];
        let expected = header.payload_len()?;
        if payload.len() != expected {
            return Err(ContainerError::SizeMismatch { expected, got: payload.len() });
        }
        let dims = Dims(header.dims);
        let payload = match header.kind {
            Kind::Volume => Payload::Volume(Volume::new(dims, decode_f32(payload))?.with_spacing(header.spacing)),
            Kind::Logits => Payload::Logits(LogitField::new(
                dims,
                header.num_classes.unwrap_or_default(),
                decode_f32(payload),
            )?),
            Kind::Mask => Payload::Mask(ClassMask::new(dims, payload.to_vec())?),
        };
        Ok(Container { payload, meta: header.meta })
    }
}

fn extend_f32(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container, ContainerError> {
    Container::from_bytes(&fs::read(path)?)
}

/// Writes via a sibling temp file and a rename so readers never see a partial file.
pub fn write_container(container: &Container, path: impl AsRef<Path>) -> Result<(), ContainerError> {
    write_atomic(path.as_ref(), &container.to_bytes())?;
    Ok(())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
