//! EMOF binary container (little-endian).
//!
//! Single array:
//! `"EMOF" | version u32 | dtype u32 | ndim u32 | dims u32[ndim] | payload`
//!
//! Named-array archive (dtype field [`ARCHIVE_CODE`]):
//! `"EMOF" | version u32 | 0 | header_len u32 | JSON header | count u32 |
//!  { name_len u32 | name | dtype u32 | ndim u32 | dims | payload } * count`

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EMOF";
pub const VERSION: u32 = 1;
pub const ARCHIVE_CODE: u32 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
}

impl DType {
    fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            other => Err(Error::Integrity(format!("unknown dtype code {other}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn f64(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Self {
        Self { name: name.into(), dtype: DType::F64, shape: shape.to_vec(), data }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub header: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Archive {
    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Integrity(format!("archive has no array named {name:?}")))
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_array_body(out: &mut Vec<u8>, dtype: DType, shape: &[usize], data: &[f64]) {
    put_u32(out, dtype as u32);
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u32(out, d as u32);
    }
    match dtype {
        DType::F32 => data.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
        DType::F64 => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Integrity(format!(
                "truncated at byte {}: need {n} more bytes, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn preamble(&mut self) -> Result<u32> {
        if self.take(4)? != MAGIC {
            return Err(Error::Integrity("missing EMOF magic".into()));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::Integrity(format!("unsupported EMOF version {version}")));
        }
        self.u32()
    }

    fn array_body(&mut self, dtype: DType) -> Result<(Vec<usize>, Vec<f64>)> {
        let ndim = self.u32()? as usize;
        let shape = (0..ndim).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let payload = self.take(numel * dtype.width())?;
        let data = match dtype {
            DType::F32 => payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
            DType::F64 => payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
        };
        Ok((shape, data))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Integrity(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn encode_array(dtype: DType, shape: &[usize], data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * shape.len() + data.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_array_body(&mut out, dtype, shape, data);
    out
}

pub fn decode_array(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut c = Cursor { bytes, pos: 0 };
    let code = c.preamble()?;
    if code == ARCHIVE_CODE {
        return Err(Error::Integrity("expected a single array, found an archive".into()));
    }
    let out = c.array_body(DType::from_code(code)?)?;
    c.finish()?;
    Ok(out)
}

pub fn encode_archive(archive: &Archive) -> Vec<u8> {
    let header = serde_json::to_vec(&archive.header).expect("JSON value serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, ARCHIVE_CODE);
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(&header);
    put_u32(&mut out, archive.arrays.len() as u32);
    for a in &archive.arrays {
        put_u32(&mut out, a.name.len() as u32);
        out.extend_from_slice(a.name.as_bytes());
        put_array_body(&mut out, a.dtype, &a.shape, &a.data);
    }
    out
}

pub fn decode_archive(bytes: &[u8]) -> Result<Archive> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.preamble()? != ARCHIVE_CODE {
        return Err(Error::Integrity("expected a named-array archive".into()));
    }
    let header_len = c.u32()? as usize;
    let header: serde_json::Value = serde_json::from_slice(c.take(header_len)?)
        .map_err(|e| Error::Integrity(format!("archive header: {e}")))?;
    let count = c.u32()? as usize;
    let mut arrays = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| Error::Integrity("array name is not UTF-8".into()))?;
        let dtype = DType::from_code(c.u32()?)?;
        let (shape, data) = c.array_body(dtype)?;
        arrays.push(NamedArray { name, dtype, shape, data });
    }
    c.finish()?;
    Ok(Archive { header, arrays })
}

pub fn write_array(path: &Path, dtype: DType, shape: &[usize], data: &[f64]) -> Result<()> {
    fs::write(path, encode_array(dtype, shape, data)).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    decode_array(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_archive(path: &Path, archive: &Archive) -> Result<()> {
    fs::write(path, encode_archive(archive)).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<Archive> {
    decode_archive(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_array_layout() {
        let bytes = encode_array(DType::F32, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(&bytes[..4], b"EMOF");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 24);
        assert_eq!(&bytes[24..28], &1.0f32.to_le_bytes());
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let archive = Archive {
            header: serde_json::json!({"layers": ["a"]}),
            arrays: vec![NamedArray::f64("a", &[3], vec![1.0, 2.0, 3.0])],
        };
        let bytes = encode_archive(&archive);
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(decode_archive(&bytes[..cut]), Err(Error::Integrity(_))));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_archive(&extra).is_err());
        assert!(decode_array(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn archive_round_trip_is_bit_exact(vals in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..40), rows in 1usize..4) {
            let n = vals.len() / rows * rows;
            let archive = Archive {
                header: serde_json::json!({"k": 1}),
                arrays: vec![
                    NamedArray::f64("w", &[rows, n / rows], vals[..n].to_vec()),
                    NamedArray::f64("b", &[0], vec![]),
                ],
            };
            let back = decode_archive(&encode_archive(&archive)).unwrap();
            prop_assert_eq!(back, archive);
        }
    }
}
