//! Canonical binary encoding of [`DataObject`] values.
//!
//! Layout (little-endian): one tag byte followed by the payload.
//!
//! | tag  | variant | payload |
//! |------|---------|---------|
//! | 0x00 | Null    | none |
//! | 0x01 | Bool    | 1 byte, 0 or 1 |
//! | 0x02 | Int32   | 4 bytes |
//! | 0x03 | Int64   | 8 bytes |
//! | 0x04 | Float32 | 4 bytes |
//! | 0x05 | Float64 | 8 bytes |
//! | 0x06 | String  | u32 byte length, UTF-8 bytes |
//! | 0x07 | Time    | i64 microseconds |
//! | 0x08 | NdArray | u8 elem kind, u8 ndim, ndim × u32 dims, raw buffer |
//! | 0x09 | List    | u32 count, encoded elements |
//! | 0x0A | Map     | u32 count, per entry: untagged string key then encoded value |
//!
//! Map entries are written in ascending key order.

use std::collections::BTreeMap;

use crate::error::{DecodeError, Expected};
use crate::idf::value::{DataObject, ElemKind, NdArray, Time};

pub const TAG_NULL: u8 = 0x00;
pub const TAG_BOOL: u8 = 0x01;
pub const TAG_INT32: u8 = 0x02;
pub const TAG_INT64: u8 = 0x03;
pub const TAG_FLOAT32: u8 = 0x04;
pub const TAG_FLOAT64: u8 = 0x05;
pub const TAG_STRING: u8 = 0x06;
pub const TAG_TIME: u8 = 0x07;
pub const TAG_NDARRAY: u8 = 0x08;
pub const TAG_LIST: u8 = 0x09;
pub const TAG_MAP: u8 = 0x0A;

/// Values nested deeper than this are rejected by the decoder.
pub const MAX_DEPTH: usize = 512;

pub fn encode(value: &DataObject) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(value));
    encode_into(value, &mut out);
    out
}

/// Exact length of `encode(value)`.
pub fn encoded_len(value: &DataObject) -> usize {
    1 + match value {
        DataObject::Null => 0,
        DataObject::Bool(_) => 1,
        DataObject::Int32(_) | DataObject::Float32(_) => 4,
        DataObject::Int64(_) | DataObject::Float64(_) | DataObject::Time(_) => 8,
        DataObject::String(s) => 4 + s.len(),
        DataObject::NdArray(a) => 2 + 4 * a.dims().len() + a.bytes().len(),
        DataObject::List(items) => 4 + items.iter().map(encoded_len).sum::<usize>(),
        DataObject::Map(m) => 4 + m.iter().map(|(k, v)| 4 + k.len() + encoded_len(v)).sum::<usize>(),
    }
}

pub fn encode_into(value: &DataObject, out: &mut Vec<u8>) {
    match value {
        DataObject::Null => out.push(TAG_NULL),
        DataObject::Bool(b) => {
            out.push(TAG_BOOL);
            out.push(*b as u8);
        }
        DataObject::Int32(v) => {
            out.push(TAG_INT32);
            out.extend_from_slice(&v.to_le_bytes());
        }
        DataObject::Int64(v) => {
            out.push(TAG_INT64);
            out.extend_from_slice(&v.to_le_bytes());
        }
        DataObject::Float32(v) => {
            out.push(TAG_FLOAT32);
            out.extend_from_slice(&v.to_le_bytes());
        }
        DataObject::Float64(v) => {
            out.push(TAG_FLOAT64);
            out.extend_from_slice(&v.to_le_bytes());
        }
        DataObject::String(s) => {
            out.push(TAG_STRING);
            put_str(s, out);
        }
        DataObject::Time(t) => {
            out.push(TAG_TIME);
            out.extend_from_slice(&t.0.to_le_bytes());
        }
        DataObject::NdArray(a) => {
            out.push(TAG_NDARRAY);
            out.push(a.kind().code());
            out.push(a.dims().len() as u8);
            for d in a.dims() {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(a.bytes());
        }
        DataObject::List(items) => {
            out.push(TAG_LIST);
            out.extend_from_slice(&(items.len() as u32).to_le_bytes());
            for item in items {
                encode_into(item, out);
            }
        }
        DataObject::Map(m) => {
            out.push(TAG_MAP);
            out.extend_from_slice(&(m.len() as u32).to_le_bytes());
            // BTreeMap iteration is already ascending by key
            for (k, v) in m {
                put_str(k, out);
                encode_into(v, out);
            }
        }
    }
}

fn put_str(s: &str, out: &mut Vec<u8>) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Decodes exactly one value spanning all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<DataObject, DecodeError> {
    let mut reader = Reader { buf: bytes, pos: 0 };
    let value = reader.value(0)?;
    if reader.pos != bytes.len() {
        return Err(DecodeError::TrailingBytes { offset: reader.pos });
    }
    Ok(value)
}

/// Decodes one value from the front of `bytes`, returning it with the number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(DataObject, usize), DecodeError> {
    let mut reader = Reader { buf: bytes, pos: 0 };
    let value = reader.value(0)?;
    Ok((value, reader.pos))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, expected: Expected) -> Result<&'a [u8], DecodeError> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(DecodeError::Truncated {
                offset: self.pos,
                expected,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, expected: Expected) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N, expected)?.try_into().unwrap())
    }

    fn u32(&mut self, expected: Expected) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.array(expected)?))
    }

    /// Reads a u32 count/length and checks that at least `count * min_unit` bytes remain.
    fn length(&mut self, min_unit: usize, expected: Expected) -> Result<usize, DecodeError> {
        let offset = self.pos;
        let n = self.u32(expected)? as usize;
        let remaining = self.buf.len() - self.pos;
        if n.saturating_mul(min_unit) > remaining {
            return Err(DecodeError::LengthOverflow {
                offset,
                declared: n,
                remaining,
            });
        }
        Ok(n)
    }

    fn string(&mut self, expected: Expected) -> Result<String, DecodeError> {
        let n = self.length(1, expected)?;
        let offset = self.pos;
        let raw = self.take(n, expected)?;
        std::str::from_utf8(raw)
            .map(str::to_owned)
            .map_err(|_| DecodeError::InvalidUtf8 { offset })
    }

    fn value(&mut self, depth: usize) -> Result<DataObject, DecodeError> {
        let offset = self.pos;
        if depth >= MAX_DEPTH {
            return Err(DecodeError::TooDeep { offset });
        }
        let tag = self.array::<1>(Expected::Tag)?[0];
        Ok(match tag {
            TAG_NULL => DataObject::Null,
            TAG_BOOL => {
                let at = self.pos;
                match self.array::<1>(Expected::Bool)?[0] {
                    0 => DataObject::Bool(false),
                    1 => DataObject::Bool(true),
                    v => return Err(DecodeError::InvalidBool { offset: at, value: v }),
                }
            }
            TAG_INT32 => DataObject::Int32(i32::from_le_bytes(self.array(Expected::Int32)?)),
            TAG_INT64 => DataObject::Int64(i64::from_le_bytes(self.array(Expected::Int64)?)),
            TAG_FLOAT32 => DataObject::Float32(f32::from_le_bytes(self.array(Expected::Float32)?)),
            TAG_FLOAT64 => DataObject::Float64(f64::from_le_bytes(self.array(Expected::Float64)?)),
            TAG_STRING => DataObject::String(self.string(Expected::String)?),
            TAG_TIME => DataObject::Time(Time(i64::from_le_bytes(self.array(Expected::Time)?))),
            TAG_NDARRAY => {
                let at = self.pos;
                let code = self.array::<1>(Expected::ElemKind)?[0];
                let kind = ElemKind::from_code(code).ok_or(DecodeError::UnknownElemKind { offset: at, code })?;
                let ndim = self.array::<1>(Expected::ArrayDims)?[0] as usize;
                let mut dims = Vec::with_capacity(ndim);
                for _ in 0..ndim {
                    dims.push(self.u32(Expected::ArrayDims)?);
                }
                let body_at = self.pos;
                let remaining = self.buf.len() - self.pos;
                let len = match NdArray::byte_len_for(kind, &dims) {
                    Some(len) if len <= remaining => len,
                    _ => {
                        return Err(DecodeError::LengthOverflow {
                            offset: body_at,
                            declared: dims.iter().map(|&d| d as usize).product::<usize>(),
                            remaining,
                        })
                    }
                };
                let raw = self.take(len, Expected::ArrayBuffer)?.to_vec();
                DataObject::NdArray(NdArray::new(kind, dims, raw).expect("length checked above"))
            }
            TAG_LIST => {
                let n = self.length(1, Expected::ListCount)?;
                let mut items = Vec::with_capacity(n);
                for _ in 0..n {
                    items.push(self.value(depth + 1)?);
                }
                DataObject::List(items)
            }
            TAG_MAP => {
                let n = self.length(5, Expected::MapCount)?;
                let mut m = BTreeMap::new();
                for _ in 0..n {
                    let key_at = self.pos;
                    let key = self.string(Expected::MapKey)?;
                    let v = self.value(depth + 1)?;
                    if m.insert(key.clone(), v).is_some() {
                        return Err(DecodeError::DuplicateKey { offset: key_at, key });
                    }
                }
                DataObject::Map(m)
            }
            other => return Err(DecodeError::UnknownTag { offset, tag: other }),
        })
    }
}
