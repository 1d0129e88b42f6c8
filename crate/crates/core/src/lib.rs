//! Inherently episodic memory: a hierarchical, time-indexed store of variant
//! data objects with long-term tiering and prediction.

pub mod error;
pub mod idf;
pub mod layout;
pub mod ltm;
pub mod model;
pub mod predict;

pub use idf::{DataObject, ElemKind, NdArray, Time};
pub use model::{Memory, MemoryId};
