use thiserror::Error;

use crate::idf::schema::Location;
use crate::idf::value::ElemKind;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValueError {
    #[error("ndarray buffer holds {actual} bytes, dims imply {expected}")]
    ArrayLength { expected: usize, actual: usize },
    #[error("ndarray dims overflow the addressable size")]
    ArrayTooLarge,
}

/// Construct the decoder was reading when it failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expected {
    Tag,
    Bool,
    Int32,
    Int64,
    Float32,
    Float64,
    String,
    Time,
    ElemKind,
    ArrayDims,
    ArrayBuffer,
    ListCount,
    MapCount,
    MapKey,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated input at offset {offset}: expected {expected:?}")]
    Truncated { offset: usize, expected: Expected },
    #[error("unknown tag 0x{tag:02X} at offset {offset}")]
    UnknownTag { offset: usize, tag: u8 },
    #[error("length {declared} at offset {offset} exceeds the {remaining} remaining bytes")]
    LengthOverflow {
        offset: usize,
        declared: usize,
        remaining: usize,
    },
    #[error("invalid UTF-8 string at offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("invalid bool byte {value} at offset {offset}")]
    InvalidBool { offset: usize, value: u8 },
    #[error("unknown ndarray element kind {code} at offset {offset}")]
    UnknownElemKind { offset: usize, code: u8 },
    #[error("duplicate map key {key:?} at offset {offset}")]
    DuplicateKey { offset: usize, key: String },
    #[error("nesting too deep at offset {offset}")]
    TooDeep { offset: usize },
    #[error("{offset} trailing bytes after value")]
    TrailingBytes { offset: usize },
}

impl DecodeError {
    pub fn offset(&self) -> usize {
        match self {
            DecodeError::Truncated { offset, .. }
            | DecodeError::UnknownTag { offset, .. }
            | DecodeError::LengthOverflow { offset, .. }
            | DecodeError::InvalidUtf8 { offset }
            | DecodeError::InvalidBool { offset, .. }
            | DecodeError::UnknownElemKind { offset, .. }
            | DecodeError::DuplicateKey { offset, .. }
            | DecodeError::TooDeep { offset }
            | DecodeError::TrailingBytes { offset } => *offset,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CastError {
    #[error("cannot cast {found} to {expected} at {path:?}")]
    Shape {
        path: String,
        expected: String,
        found: &'static str,
    },
    #[error("array {kind}{dims:?} does not fit {expected} at {path:?}")]
    ArrayLayout {
        path: String,
        expected: String,
        kind: ElemKind,
        dims: Vec<u32>,
    },
    #[error("expected {expected} elements, found {found} at {path:?}")]
    Arity {
        path: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("schema parse error at {location}: {message}")]
    Parse { message: String, location: Location },
    #[error("unresolved type name {name:?} at {location}")]
    Unresolved { name: String, location: Location },
    #[error("cyclic type definition {} at {location}", names.join(" -> "))]
    Cycle { names: Vec<String>, location: Location },
    #[error("duplicate definition {name:?} at {location}")]
    Duplicate { name: String, location: Location },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BindingError {
    #[error("template has no rendering for kind {kind:?} (field {unit}.{field})")]
    MissingKind { kind: String, unit: String, field: String },
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum IdError {
    #[error("empty id component")]
    EmptyComponent,
    #[error("id component {0:?} contains '/'")]
    Slash(String),
    #[error("id has {0} components, at most 6 allowed")]
    TooManyComponents(usize),
    #[error("bad timestamp {0:?}")]
    BadTimestamp(String),
    #[error("bad instance index {0:?}")]
    BadIndex(String),
    #[error("id components must be set top-down")]
    NotPrefixComplete,
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum LinkError {
    #[error("unknown link source {0}")]
    UnknownSource(String),
    #[error("link target {0} lies inside the source entity")]
    SelfLink(String),
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum CommitError {
    #[error("unknown core segment {0:?}")]
    UnknownCoreSegment(String),
    #[error("commit addressed to memory {found:?}, this is {expected:?}")]
    WrongMemory { expected: String, found: String },
    #[error("update id {0} is not an entity id")]
    NotEntityLevel(String),
    #[error("update carries no instances")]
    NoInstances,
    #[error("instance {index} does not conform to the segment type; missing {missing:?}")]
    TypeConformance { index: usize, missing: Vec<String> },
    #[error("provider {provider:?} type drops required field {field:?}")]
    ProviderTypeMismatch { provider: String, field: String },
    #[error(transparent)]
    Link(#[from] LinkError),
}

impl CommitError {
    /// Stable short code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            CommitError::UnknownCoreSegment(_) => "unknown-core-segment",
            CommitError::WrongMemory { .. } => "wrong-memory",
            CommitError::NotEntityLevel(_) => "not-entity-level",
            CommitError::NoInstances => "no-instances",
            CommitError::TypeConformance { .. } => "type-conformance",
            CommitError::ProviderTypeMismatch { .. } => "provider-type-mismatch",
            CommitError::Link(_) => "link",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum QueryError {
    #[error("malformed regex {pattern:?}: {message}")]
    BadRegex { pattern: String, message: String },
    #[error("LatestN requires n >= 1")]
    ZeroLatestN,
    #[error("time range begins at {0:?} after its end {1:?}")]
    InvertedRange(crate::idf::Time, crate::idf::Time),
}

#[derive(Debug, Error)]
pub enum LtmError {
    #[error("ltm i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("no ltm record for {0}")]
    NotFound(String),
    #[error("integrity error in record {record}: {reason}")]
    Integrity { record: String, reason: String },
    #[error("entity {0} has no two snapshots sharing a numeric layout")]
    NoSharedLayout(String),
    #[error("unsupported file version {found} in {file}")]
    Version { file: String, found: u32 },
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum PredictError {
    #[error("insufficient data to predict {0}")]
    InsufficientData(String),
    #[error("latent model for {0} is stale")]
    StaleModel(String),
    #[error("timestamp {requested} is not after the latest snapshot {latest}")]
    NotFuture {
        requested: crate::idf::Time,
        latest: crate::idf::Time,
    },
    #[error("unknown entity {0}")]
    UnknownEntity(String),
}

impl PredictError {
    pub fn code(&self) -> &'static str {
        match self {
            PredictError::InsufficientData(_) => "insufficient-data",
            PredictError::StaleModel(_) => "stale-model",
            PredictError::NotFuture { .. } => "non-future-timestamp",
            PredictError::UnknownEntity(_) => "unknown-entity",
        }
    }
}

impl DecodeError {
    /// Stable short name used by the golden-vector files.
    pub fn kind(&self) -> &'static str {
        match self {
            DecodeError::Truncated { .. } => "truncated",
            DecodeError::UnknownTag { .. } => "unknown-tag",
            DecodeError::LengthOverflow { .. } => "length-overflow",
            DecodeError::InvalidUtf8 { .. } => "invalid-utf8",
            DecodeError::InvalidBool { .. } => "invalid-bool",
            DecodeError::UnknownElemKind { .. } => "unknown-elem-kind",
            DecodeError::DuplicateKey { .. } => "duplicate-key",
            DecodeError::TooDeep { .. } => "too-deep",
            DecodeError::TrailingBytes { .. } => "trailing-bytes",
        }
    }
}
