//! Single-file model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "GENHOPM\0"
//! version      u32
//! payload_len  u64
//! payload      payload_len bytes
//! checksum     32 bytes  SHA-256 over everything before it
//! ```
//!
//! The payload is a section count (`u32`) followed by named sections. Each
//! section is a `u16` name length, the UTF-8 name, a kind byte, then either a
//! matrix (kind 0: `u64` rows, `u64` cols, row-major IEEE-754 `f64` values) or
//! text (kind 1: `u64` byte length, UTF-8 bytes).

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GENHOPM\0";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 8;
const CHECKSUM_LEN: usize = 32;
const KIND_MATRIX: u8 = 0;
const KIND_TEXT: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Matrix { rows: usize, cols: usize, data: Vec<f64> },
    Text(String),
}

/// An ordered set of named sections.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    sections: Vec<(String, Section)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn push(&mut self, name: impl Into<String>, section: Section) {
        self.sections.push((name.into(), section));
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: &DMatrix<f64>) {
        let data = m.transpose().as_slice().to_vec();
        self.push(name, Section::Matrix { rows: m.nrows(), cols: m.ncols(), data });
    }

    /// Stores a slice as a single-row matrix.
    pub fn push_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.push(name, Section::Matrix { rows: 1, cols: v.len(), data: v.to_vec() });
    }

    /// Stores integers as a single-row matrix (exact below 2^53).
    pub fn push_indices(&mut self, name: impl Into<String>, v: &[usize]) {
        self.push_vec(name, &v.iter().map(|&i| i as f64).collect::<Vec<_>>());
    }

    pub fn push_text(&mut self, name: impl Into<String>, text: impl Into<String>) {
        self.push(name, Section::Text(text.into()));
    }

    pub fn get(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Malformed(format!("missing section `{name}`")))
    }

    fn matrix_parts(&self, name: &str) -> Result<(usize, usize, &[f64])> {
        match self.get(name)? {
            Section::Matrix { rows, cols, data } => Ok((*rows, *cols, data)),
            Section::Text(_) => Err(Error::Malformed(format!("section `{name}` is not a matrix"))),
        }
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let (r, c, d) = self.matrix_parts(name)?;
        Ok(DMatrix::from_row_slice(r, c, d))
    }

    /// All values of a matrix section in row-major order.
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.matrix_parts(name)?.2.to_vec())
    }

    pub fn indices(&self, name: &str) -> Result<Vec<usize>> {
        self.matrix_parts(name)?
            .2
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v < 9.0e15 {
                    Ok(v as usize)
                } else {
                    Err(Error::Malformed(format!("section `{name}` holds a non-index value {v}")))
                }
            })
            .collect()
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            Section::Text(t) => Ok(t),
            Section::Matrix { .. } => Err(Error::Malformed(format!("section `{name}` is not text"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        payload.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, section) in &self.sections {
            payload.extend_from_slice(&(name.len() as u16).to_le_bytes());
            payload.extend_from_slice(name.as_bytes());
            match section {
                Section::Matrix { rows, cols, data } => {
                    payload.push(KIND_MATRIX);
                    payload.extend_from_slice(&(*rows as u64).to_le_bytes());
                    payload.extend_from_slice(&(*cols as u64).to_le_bytes());
                    for v in data {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Section::Text(t) => {
                    payload.push(KIND_TEXT);
                    payload.extend_from_slice(&(t.len() as u64).to_le_bytes());
                    payload.extend_from_slice(t.as_bytes());
                }
            }
        }
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses a container. The version is checked before the checksum so a
    /// file from another format version reports that instead of corruption.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(Error::Malformed("not a GenHop model file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
        }
        let payload_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let end = usize::try_from(payload_len)
            .ok()
            .and_then(|l| l.checked_add(HEADER_LEN))
            .filter(|&e| e.checked_add(CHECKSUM_LEN) == Some(bytes.len()))
            .ok_or(Error::ChecksumMismatch)?;
        if Sha256::digest(&bytes[..end]).as_slice() != &bytes[end..] {
            return Err(Error::ChecksumMismatch);
        }
        parse_payload(&bytes[HEADER_LEN..end]).map_err(Error::Malformed)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("payload ends early")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> std::result::Result<usize, String> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| "length overflows usize".to_string())
    }
}

fn parse_payload(bytes: &[u8]) -> std::result::Result<Container, String> {
    let mut r = Reader { bytes, pos: 0 };
    let count = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    let mut out = Container::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| "section name is not UTF-8")?.to_string();
        let section = match r.take(1)?[0] {
            KIND_MATRIX => {
                let (rows, cols) = (r.u64()?, r.u64()?);
                let n = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or("matrix too large")?;
                let data =
                    r.take(n)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                Section::Matrix { rows, cols, data }
            }
            KIND_TEXT => {
                let n = r.u64()?;
                Section::Text(String::from_utf8(r.take(n)?.to_vec()).map_err(|_| "text section is not UTF-8")?)
            }
            k => return Err(format!("unknown section kind {k} in `{name}`")),
        };
        out.push(name, section);
    }
    if r.pos != bytes.len() {
        return Err("trailing bytes after the last section".into());
    }
    Ok(out)
}
