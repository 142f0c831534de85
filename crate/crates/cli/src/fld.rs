//! FLD: a small bit-exact binary array format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MRPD" | version u16 | dtype u8 | ndim u8 | dims u32 × ndim
//!        | metadata length u32 | metadata (UTF-8 `key=value` lines)
//!        | payload
//! ```
//!
//! Payloads are row-major: `f64` for real, `(re, im)` `f64` pairs for
//! complex, and bits packed LSB first for masks.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use crate::error::CliError;

pub const MAGIC: &[u8; 4] = b"MRPD";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Real = 0,
    Complex = 1,
    Bitmask = 2,
}

impl DType {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::Real),
            1 => Some(DType::Complex),
            2 => Some(DType::Bitmask),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
    Bitmask(Vec<bool>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::Real(_) => DType::Real,
            Payload::Complex(_) => DType::Complex,
            Payload::Bitmask(_) => DType::Bitmask,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::Real(v) => v.len(),
            Payload::Complex(v) => v.len(),
            Payload::Bitmask(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One array with its shape and string metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FldArray {
    pub dims: Vec<usize>,
    pub meta: BTreeMap<String, String>,
    pub payload: Payload,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Format(msg.into())
}

impl FldArray {
    pub fn new(dims: Vec<usize>, payload: Payload) -> Result<Self, CliError> {
        let n: usize = dims.iter().product();
        if n != payload.len() {
            return Err(bad(format!("dims {dims:?} hold {n} elements, payload has {}", payload.len())));
        }
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(bad(format!("dims {dims:?} not representable")));
        }
        Ok(Self { dims, meta: BTreeMap::new(), payload })
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Result<&str, CliError> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| bad(format!("metadata key `{key}` missing")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.meta(key)?;
        raw.parse().map_err(|_| bad(format!("metadata `{key}` = `{raw}` unparseable")))
    }

    pub fn real(&self) -> Result<&[f64], CliError> {
        match &self.payload {
            Payload::Real(v) => Ok(v),
            other => Err(bad(format!("expected real payload, found {:?}", other.dtype()))),
        }
    }

    pub fn complex(&self) -> Result<&[Complex64], CliError> {
        match &self.payload {
            Payload::Complex(v) => Ok(v),
            other => Err(bad(format!("expected complex payload, found {:?}", other.dtype()))),
        }
    }

    pub fn bits(&self) -> Result<&[bool], CliError> {
        match &self.payload {
            Payload::Bitmask(v) => Ok(v),
            other => Err(bad(format!("expected bitmask payload, found {:?}", other.dtype()))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.payload.dtype() as u8);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let mut meta = String::new();
        for (k, v) in &self.meta {
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        match &self.payload {
            Payload::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Complex(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
            Payload::Bitmask(v) => {
                for chunk in v.chunks(8) {
                    out.push(chunk.iter().enumerate().fold(0u8, |b, (i, &k)| b | ((k as u8) << i)));
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let dtype = DType::from_code(r.take(1)?[0]).ok_or_else(|| bad("unknown dtype code"))?;
        let ndim = r.take(1)?[0] as usize;
        let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("dims overflow"))?;
        let meta_len = r.u32()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?).map_err(|_| bad("metadata not UTF-8"))?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("metadata line `{line}`")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let payload = match dtype {
            DType::Real => {
                let raw = r.take(n.checked_mul(8).ok_or_else(|| bad("payload overflow"))?)?;
                Payload::Real(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
            DType::Complex => {
                let raw = r.take(n.checked_mul(16).ok_or_else(|| bad("payload overflow"))?)?;
                Payload::Complex(
                    raw.chunks_exact(16)
                        .map(|c| {
                            Complex64::new(
                                f64::from_le_bytes(c[..8].try_into().unwrap()),
                                f64::from_le_bytes(c[8..].try_into().unwrap()),
                            )
                        })
                        .collect(),
                )
            }
            DType::Bitmask => {
                let raw = r.take(n.div_ceil(8))?;
                Payload::Bitmask((0..n).map(|i| raw[i / 8] >> (i % 8) & 1 == 1).collect())
            }
        };
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { dims, meta, payload })
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Format(m) => CliError::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, &self.to_bytes())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| CliError::Io(format!("{}: not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}
