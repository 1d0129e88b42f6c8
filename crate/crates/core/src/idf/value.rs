use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, NaiveDateTime};

use crate::error::ValueError;

/// Microseconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Time(pub i64);

const TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S%.6f";

impl Time {
    pub const MIN: Time = Time(i64::MIN);
    pub const MAX: Time = Time(i64::MAX);

    pub fn from_micros(us: i64) -> Self {
        Time(us)
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        Time((secs * 1e6).round() as i64)
    }

    pub fn micros(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    /// Current wall-clock time.
    pub fn now() -> Self {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap_or_default();
        Time(now.as_micros() as i64)
    }

    /// Parses `YYYY-MM-DD HH:MM:SS.ffffff` (UTC) or a bare decimal microsecond count.
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        if text.is_empty() {
            return None;
        }
        let digits = text.strip_prefix('-').unwrap_or(text);
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            return text.parse::<i64>().ok().map(Time);
        }
        let naive = NaiveDateTime::parse_from_str(text, TIME_FORMAT).ok()?;
        Some(Time(naive.and_utc().timestamp_micros()))
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match DateTime::from_timestamp_micros(self.0) {
            Some(dt) => write!(f, "{}", dt.naive_utc().format(TIME_FORMAT)),
            None => write!(f, "{}", self.0),
        }
    }
}

/// Element type of an [`NdArray`] buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ElemKind {
    U8,
    I32,
    I64,
    F32,
    F64,
}

impl ElemKind {
    pub fn width(self) -> usize {
        match self {
            ElemKind::U8 => 1,
            ElemKind::I32 | ElemKind::F32 => 4,
            ElemKind::I64 | ElemKind::F64 => 8,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ElemKind::U8 => 0,
            ElemKind::I32 => 1,
            ElemKind::I64 => 2,
            ElemKind::F32 => 3,
            ElemKind::F64 => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ElemKind::U8,
            1 => ElemKind::I32,
            2 => ElemKind::I64,
            3 => ElemKind::F32,
            4 => ElemKind::F64,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ElemKind::U8 => "u8",
            ElemKind::I32 => "i32",
            ElemKind::I64 => "i64",
            ElemKind::F32 => "f32",
            ElemKind::F64 => "f64",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "u8" | "byte" => ElemKind::U8,
            "i32" | "int" => ElemKind::I32,
            "i64" | "long" => ElemKind::I64,
            "f32" | "float" => ElemKind::F32,
            "f64" | "double" => ElemKind::F64,
            _ => return None,
        })
    }
}

impl fmt::Display for ElemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A dense multi-dimensional array stored as a raw little-endian element buffer.
#[derive(Debug, Clone)]
pub struct NdArray {
    kind: ElemKind,
    dims: Vec<u32>,
    bytes: Vec<u8>,
}

impl NdArray {
    pub fn new(kind: ElemKind, dims: Vec<u32>, bytes: Vec<u8>) -> Result<Self, ValueError> {
        let expected = Self::byte_len_for(kind, &dims).ok_or(ValueError::ArrayTooLarge)?;
        if expected != bytes.len() {
            return Err(ValueError::ArrayLength {
                expected,
                actual: bytes.len(),
            });
        }
        Ok(NdArray { kind, dims, bytes })
    }

    pub fn zeros(kind: ElemKind, dims: Vec<u32>) -> Result<Self, ValueError> {
        let len = Self::byte_len_for(kind, &dims).ok_or(ValueError::ArrayTooLarge)?;
        Ok(NdArray {
            kind,
            dims,
            bytes: vec![0; len],
        })
    }

    /// Byte length implied by `dims`; `None` on overflow.
    pub fn byte_len_for(kind: ElemKind, dims: &[u32]) -> Option<usize> {
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .and_then(|n| n.checked_mul(kind.width()))
    }

    pub fn from_u8(dims: Vec<u32>, data: Vec<u8>) -> Result<Self, ValueError> {
        Self::new(ElemKind::U8, dims, data)
    }

    pub fn from_f32(dims: Vec<u32>, data: &[f32]) -> Result<Self, ValueError> {
        let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::new(ElemKind::F32, dims, bytes)
    }

    pub fn from_f64(dims: Vec<u32>, data: &[f64]) -> Result<Self, ValueError> {
        let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::new(ElemKind::F64, dims, bytes)
    }

    pub fn from_i32(dims: Vec<u32>, data: &[i32]) -> Result<Self, ValueError> {
        let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::new(ElemKind::I32, dims, bytes)
    }

    pub fn from_i64(dims: Vec<u32>, data: &[i64]) -> Result<Self, ValueError> {
        let bytes = data.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::new(ElemKind::I64, dims, bytes)
    }

    pub fn kind(&self) -> ElemKind {
        self.kind
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len() / self.kind.width()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// Element `i` widened to `f64`.
    pub fn get_f64(&self, i: usize) -> f64 {
        let w = self.kind.width();
        let b = &self.bytes[i * w..(i + 1) * w];
        match self.kind {
            ElemKind::U8 => b[0] as f64,
            ElemKind::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            ElemKind::I64 => i64::from_le_bytes(b.try_into().unwrap()) as f64,
            ElemKind::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            ElemKind::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.get_f64(i)).collect()
    }

    /// Builds an array of `kind` from `f64` values, rounding and saturating for integer kinds.
    pub fn from_f64_as(kind: ElemKind, dims: Vec<u32>, values: &[f64]) -> Result<Self, ValueError> {
        let mut bytes = Vec::with_capacity(values.len() * kind.width());
        for &v in values {
            match kind {
                ElemKind::U8 => bytes.push(v.round().clamp(0.0, 255.0) as u8),
                ElemKind::I32 => bytes.extend_from_slice(&(v.round() as i32).to_le_bytes()),
                ElemKind::I64 => bytes.extend_from_slice(&(v.round() as i64).to_le_bytes()),
                ElemKind::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
                ElemKind::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
            }
        }
        Self::new(kind, dims, bytes)
    }
}

impl PartialEq for NdArray {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.dims == other.dims && self.bytes == other.bytes
    }
}

/// The recursive variant value carried everywhere in the memory system.
///
/// Maps are kept in ascending key order, so every value is already in
/// canonical form. Equality compares floats bitwise, making `NaN == NaN`
/// and `0.0 != -0.0`; this is the structural equality the codec preserves.
#[derive(Debug, Clone)]
pub enum DataObject {
    Null,
    Bool(bool),
    Int32(i32),
    Int64(i64),
    Float32(f32),
    Float64(f64),
    String(String),
    Time(Time),
    NdArray(NdArray),
    List(Vec<DataObject>),
    Map(BTreeMap<String, DataObject>),
}

impl PartialEq for DataObject {
    fn eq(&self, other: &Self) -> bool {
        use DataObject::*;
        match (self, other) {
            (Null, Null) => true,
            (Bool(a), Bool(b)) => a == b,
            (Int32(a), Int32(b)) => a == b,
            (Int64(a), Int64(b)) => a == b,
            (Float32(a), Float32(b)) => a.to_bits() == b.to_bits(),
            (Float64(a), Float64(b)) => a.to_bits() == b.to_bits(),
            (String(a), String(b)) => a == b,
            (Time(a), Time(b)) => a == b,
            (NdArray(a), NdArray(b)) => a == b,
            (List(a), List(b)) => a == b,
            (Map(a), Map(b)) => a == b,
            _ => false,
        }
    }
}

impl DataObject {
    pub fn map<K: Into<String>>(entries: impl IntoIterator<Item = (K, DataObject)>) -> Self {
        DataObject::Map(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn string(s: impl Into<String>) -> Self {
        DataObject::String(s.into())
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            DataObject::Null => "null",
            DataObject::Bool(_) => "bool",
            DataObject::Int32(_) => "int32",
            DataObject::Int64(_) => "int64",
            DataObject::Float32(_) => "float32",
            DataObject::Float64(_) => "float64",
            DataObject::String(_) => "string",
            DataObject::Time(_) => "time",
            DataObject::NdArray(_) => "ndarray",
            DataObject::List(_) => "list",
            DataObject::Map(_) => "map",
        }
    }

    pub fn get(&self, key: &str) -> Option<&DataObject> {
        match self {
            DataObject::Map(m) => m.get(key),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, DataObject>> {
        match self {
            DataObject::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[DataObject]> {
        match self {
            DataObject::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            DataObject::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            DataObject::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Integer value of `Int32` or `Int64`.
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            DataObject::Int32(v) => Some(*v as i64),
            DataObject::Int64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            DataObject::Int32(v) => Some(*v as f64),
            DataObject::Int64(v) => Some(*v as f64),
            DataObject::Float32(v) => Some(*v as f64),
            DataObject::Float64(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_time(&self) -> Option<Time> {
        match self {
            DataObject::Time(t) => Some(*t),
            _ => None,
        }
    }

    pub fn as_ndarray(&self) -> Option<&NdArray> {
        match self {
            DataObject::NdArray(a) => Some(a),
            _ => None,
        }
    }

    /// Semantic payload size in bytes: leaf widths, string and buffer lengths;
    /// containers contribute nothing of their own.
    pub fn payload_size(&self) -> usize {
        match self {
            DataObject::Null => 0,
            DataObject::Bool(_) => 1,
            DataObject::Int32(_) | DataObject::Float32(_) => 4,
            DataObject::Int64(_) | DataObject::Float64(_) | DataObject::Time(_) => 8,
            DataObject::String(s) => s.len(),
            DataObject::NdArray(a) => a.bytes().len(),
            DataObject::List(items) => items.iter().map(DataObject::payload_size).sum(),
            DataObject::Map(m) => m.values().map(DataObject::payload_size).sum(),
        }
    }

    /// Nesting depth; leaves have depth 1.
    pub fn depth(&self) -> usize {
        match self {
            DataObject::List(items) => 1 + items.iter().map(DataObject::depth).max().unwrap_or(0),
            DataObject::Map(m) => 1 + m.values().map(DataObject::depth).max().unwrap_or(0),
            _ => 1,
        }
    }
}

impl From<bool> for DataObject {
    fn from(v: bool) -> Self {
        DataObject::Bool(v)
    }
}

impl From<i32> for DataObject {
    fn from(v: i32) -> Self {
        DataObject::Int32(v)
    }
}

impl From<i64> for DataObject {
    fn from(v: i64) -> Self {
        DataObject::Int64(v)
    }
}

impl From<f32> for DataObject {
    fn from(v: f32) -> Self {
        DataObject::Float32(v)
    }
}

impl From<f64> for DataObject {
    fn from(v: f64) -> Self {
        DataObject::Float64(v)
    }
}

impl From<&str> for DataObject {
    fn from(v: &str) -> Self {
        DataObject::String(v.to_owned())
    }
}

impl From<String> for DataObject {
    fn from(v: String) -> Self {
        DataObject::String(v)
    }
}

impl From<Time> for DataObject {
    fn from(v: Time) -> Self {
        DataObject::Time(v)
    }
}

impl From<NdArray> for DataObject {
    fn from(v: NdArray) -> Self {
        DataObject::NdArray(v)
    }
}

impl From<Vec<DataObject>> for DataObject {
    fn from(v: Vec<DataObject>) -> Self {
        DataObject::List(v)
    }
}
