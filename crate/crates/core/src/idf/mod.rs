//! Interpretable data format: variant values, type objects, the canonical
//! binary codec, partial casts and schema-driven binding generation.

pub mod binding;
pub mod codec;
pub mod golden;
pub mod schema;
pub mod types;
pub mod value;

pub use binding::{emit_binding_stubs, BindingTemplate};
pub use codec::{decode, encode};
pub use schema::{parse_schema, parse_schema_with, SchemaDocument};
pub use types::{cast, CastValue, Field, FieldState, LeafKind, TypeKind, TypeObject, TypedView};
pub use value::{DataObject, ElemKind, NdArray, Time};

/// Semantic payload size of `value` in bytes.
pub fn payload_size(value: &DataObject) -> usize {
    value.payload_size()
}
