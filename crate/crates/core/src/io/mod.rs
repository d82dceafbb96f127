//! File formats: `.flo` flow, dot CSVs, raw density planes, checkpoints,
//! run configuration and on-disk sequence layout. All binary formats are
//! little-endian.

mod checkpoint;
mod config;
mod density_raw;
mod dots;
mod flo;
mod layout;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{
    apply_config_str, parse_config, parse_config_str, parse_scene_spec, parse_scene_spec_str, RunConfig,
};
pub use density_raw::{
    decode_density, decode_planes, density_png, encode_density, encode_planes, read_density, write_density,
    write_density_png,
};
pub use dots::{format_dots_csv, parse_dots_csv, parse_dots_str, write_dots_csv};
pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use layout::{encode_rgb_png, read_rgb_png, write_rgb_png, SequenceLayout};

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic {0:?}")]
    BadMagic(Vec<u8>),
    #[error("truncated or oversized data: expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
    #[error("unexpected end of data at byte {0}")]
    Truncated(usize),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint config digest {found:#018x} does not match model {expected:#018x}")]
    Digest { found: u64, expected: u64 },
    #[error("checkpoint lacks parameter {0}")]
    MissingParam(String),
    #[error("checkpoint has unknown parameter {0}")]
    ExtraParam(String),
    #[error("parameter {name}: shape {found:?}, model expects {expected:?}")]
    ParamShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {msg}")]
    BadValue { line: usize, key: String, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("image {path}: {msg}")]
    Image { path: PathBuf, msg: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("sequence {path}: {msg}")]
    Layout { path: PathBuf, msg: String },
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// Sequential little-endian reader over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(IoError::Truncated(self.buf.len()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or(IoError::Truncated(self.buf.len()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect())
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(IoError::Length {
                expected: self.pos,
                got: self.buf.len(),
            });
        }
        Ok(())
    }
}
