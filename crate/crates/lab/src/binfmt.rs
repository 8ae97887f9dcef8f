//! Matrix binary format: a 17-byte little-endian header (`b"MLAB"`, `u32`
//! version, `u32` rows, `u32` cols, `u8` dtype with 0 = f32, 1 = f64)
//! followed by the row-major payload.

use std::io::{Read, Write};

use muonlab_core::Matrix;

use crate::error::{LabError, Result};

pub const MAGIC: [u8; 4] = *b"MLAB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 17;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

/// A decoded record before conversion, so `f32` payloads can be kept as is.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub rows: usize,
    pub cols: usize,
    pub payload: Payload,
}

impl Record {
    pub fn into_matrix(self) -> Result<Matrix> {
        let data = match self.payload {
            Payload::F64(v) => v,
            Payload::F32(v) => v.into_iter().map(f64::from).collect(),
        };
        Ok(Matrix::from_vec(self.rows, self.cols, data)?)
    }
}

fn header(rows: usize, cols: usize, dtype: Dtype) -> Result<[u8; HEADER_LEN as usize]> {
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| LabError::Usage(format!("dimension {v} does not fit the matrix format")))
    };
    let mut h = [0u8; HEADER_LEN as usize];
    h[0..4].copy_from_slice(&MAGIC);
    h[4..8].copy_from_slice(&VERSION.to_le_bytes());
    h[8..12].copy_from_slice(&dim(rows)?.to_le_bytes());
    h[12..16].copy_from_slice(&dim(cols)?.to_le_bytes());
    h[16] = dtype.code();
    Ok(h)
}

pub fn encode_matrix(m: &Matrix, dtype: Dtype) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN as usize + m.len() * dtype.width());
    out.extend_from_slice(&header(m.rows(), m.cols(), dtype)?);
    match dtype {
        Dtype::F64 => m.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => m.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
    }
    Ok(out)
}

pub fn encode_f32(rows: usize, cols: usize, data: &[f32]) -> Result<Vec<u8>> {
    if data.len() != rows * cols {
        return Err(LabError::Usage(format!("{} values for a {rows}x{cols} record", data.len())));
    }
    let mut out = Vec::with_capacity(HEADER_LEN as usize + data.len() * 4);
    out.extend_from_slice(&header(rows, cols, Dtype::F32)?);
    data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    Ok(out)
}

pub fn write_matrix<W: Write>(w: &mut W, m: &Matrix, dtype: Dtype) -> std::io::Result<()> {
    let bytes = encode_matrix(m, dtype).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()))?;
    w.write_all(&bytes)
}

/// Decodes consecutive records from a byte buffer, tracking the offset for
/// error messages.
pub struct Decoder<'a> {
    name: String,
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(name: impl Into<String>, bytes: &'a [u8]) -> Self {
        Self {
            name: name.into(),
            bytes,
            offset: 0,
        }
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn is_done(&self) -> bool {
        self.offset == self.bytes.len()
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> LabError {
        LabError::Format {
            path: self.name.clone(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.offset.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.offset..end];
                self.offset = end;
                Ok(s)
            }
            None => Err(self.err(
                self.offset,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.offset),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn next_record(&mut self) -> Result<Record> {
        let start = self.offset;
        if self.take(4, "magic")? != MAGIC {
            return Err(self.err(start, "bad magic, expected \"MLAB\""));
        }
        let version = self.u32("version")?;
        if version != VERSION {
            return Err(self.err(start + 4, format!("unsupported version {version}")));
        }
        let rows = self.u32("rows")? as usize;
        let cols = self.u32("cols")? as usize;
        if rows == 0 || cols == 0 {
            return Err(self.err(start + 8, format!("empty shape {rows}x{cols}")));
        }
        let dtype = match self.take(1, "dtype")?[0] {
            0 => Dtype::F32,
            1 => Dtype::F64,
            other => return Err(self.err(start + 16, format!("unknown dtype code {other}"))),
        };
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(dtype.width()))
            .ok_or_else(|| self.err(start + 8, "shape overflows"))?;
        let body = self.take(n, "payload")?;
        let payload = match dtype {
            Dtype::F32 => Payload::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect()),
            Dtype::F64 => Payload::F64(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect()),
        };
        Ok(Record { rows, cols, payload })
    }

    /// Exactly one record and nothing after it.
    pub fn single(mut self) -> Result<Record> {
        let r = self.next_record()?;
        if !self.is_done() {
            return Err(self.err(self.offset, "trailing bytes after record"));
        }
        Ok(r)
    }
}

pub fn decode_matrix(name: &str, bytes: &[u8]) -> Result<Matrix> {
    Decoder::new(name, bytes).single()?.into_matrix()
}

pub fn read_matrix_file(path: &std::path::Path) -> Result<Matrix> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| LabError::io(path, e))?;
    decode_matrix(&path.display().to_string(), &bytes)
}

pub fn write_matrix_file(path: &std::path::Path, m: &Matrix, dtype: Dtype) -> Result<()> {
    std::fs::write(path, encode_matrix(m, dtype)?).map_err(|e| LabError::io(path, e))
}
