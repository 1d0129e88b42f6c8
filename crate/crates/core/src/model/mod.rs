//! Hierarchical, time-indexed working memory.

pub mod id;
pub mod memory;
pub mod query;

pub use id::{Level, MemoryId};
pub use memory::{
    Commit, CommitOutcome, CoreSegment, Entity, EntityInstance, EntitySnapshot, EntityStats, EntityUpdate,
    InstanceMetadata, Memory, ProviderSegment, Tier, UpdateNotification,
};
pub use query::{
    future_requests, resolve_query, resolve_query_with, select_times, CoreQuery, EntityQuery, History,
    InstanceSelector, NameSelector, ProviderQuery, Query, QueryResult, SnapshotQuery, SnapshotSelector,
};
