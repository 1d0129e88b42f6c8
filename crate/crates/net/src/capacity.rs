//! Working-memory capacity enforcement: which snapshots move to long-term storage.
//!
//! Candidates are every non-latest snapshot of an unprotected entity, oldest
//! first. A candidate is evicted while the byte budget is exceeded or while its
//! own entity holds more snapshots than allowed. Entities are protected when
//! hot (enough recent queries) or when a hot entity links to them.

use std::collections::{BTreeMap, BTreeSet};

use epimem_core::idf::TypeObject;
use epimem_core::model::EntitySnapshot;
use epimem_core::{Memory, MemoryId, Time};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityPolicy {
    pub max_bytes: u64,
    pub max_snapshots_per_entity: usize,
    pub hot_queries: usize,
    pub hot_window_us: i64,
}

impl CapacityPolicy {
    pub fn is_hot(&self, queries_in_window: usize) -> bool {
        queries_in_window >= self.hot_queries
    }
}

/// Destination of consolidated snapshots.
pub trait ConsolidationSink {
    fn consolidate(
        &self,
        id: &MemoryId,
        snapshot: &EntitySnapshot,
        ty: Option<&TypeObject>,
        links: &[MemoryId],
        now: Time,
    ) -> Result<(), String>;
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnforceReport {
    /// Moved to the sink and evicted from WM, in eviction order.
    pub consolidated: Vec<MemoryId>,
    /// Sink failures; these snapshots stay in WM.
    pub failed: Vec<(MemoryId, String)>,
}

pub fn hot_entities(memory: &Memory, policy: &CapacityPolicy, now: Time) -> BTreeSet<MemoryId> {
    memory
        .entities()
        .filter(|(_, e)| policy.is_hot(e.stats.queries_within(now, policy.hot_window_us)))
        .map(|(id, _)| id)
        .collect()
}

/// Hot entities plus every entity a hot entity links to.
pub fn protected_entities(memory: &Memory, policy: &CapacityPolicy, now: Time) -> BTreeSet<MemoryId> {
    let hot = hot_entities(memory, policy, now);
    let targets: Vec<MemoryId> = memory
        .entities()
        .filter(|(id, _)| hot.contains(id))
        .flat_map(|(_, e)| e.links.values().flatten().cloned().collect::<Vec<_>>())
        .collect();
    let mut out = hot;
    for (id, _) in memory.entities() {
        let linked = targets
            .iter()
            .any(|t| t.entity_prefix().as_ref() == Some(&id) || t.is_prefix_of(&id));
        if linked {
            out.insert(id);
        }
    }
    out
}

fn over_capacity(memory: &Memory, policy: &CapacityPolicy) -> bool {
    memory.payload_bytes() as u64 > policy.max_bytes
        || memory.core_segments().any(|c| {
            c.providers.values().any(|p| {
                p.entities
                    .values()
                    .any(|e| e.timeline.len() > policy.max_snapshots_per_entity)
            })
        })
}

/// Snapshot IDs to evict, in eviction order.
pub fn plan_evictions(memory: &Memory, policy: &CapacityPolicy, now: Time) -> Vec<MemoryId> {
    if !over_capacity(memory, policy) {
        return Vec::new();
    }
    let protected = protected_entities(memory, policy, now);
    let mut bytes = memory.payload_bytes() as u64;
    let mut counts: BTreeMap<MemoryId, usize> = BTreeMap::new();
    let mut candidates = Vec::new();
    for (id, e) in memory.entities() {
        counts.insert(id.clone(), e.timeline.len());
        if protected.contains(&id) {
            continue;
        }
        let n = e.timeline.len();
        for (t, s) in e.timeline.iter().take(n.saturating_sub(1)) {
            candidates.push((*t, id.snapshot(*t), id.clone(), s.payload_size() as u64));
        }
    }
    candidates.sort();
    let mut plan = Vec::new();
    for (_, sid, entity, size) in candidates {
        let count = counts.get_mut(&entity).expect("counted above");
        if bytes > policy.max_bytes || *count > policy.max_snapshots_per_entity {
            bytes -= size;
            *count -= 1;
            plan.push(sid);
        }
    }
    plan
}

fn segment_type<'m>(memory: &'m Memory, id: &MemoryId) -> Option<&'m TypeObject> {
    let core = memory.core_segment(id.core_segment()?)?;
    core.providers
        .get(id.provider_segment()?)
        .and_then(|p| p.ty.as_ref())
        .or(core.ty.as_ref())
}

/// Consolidates planned snapshots into `sink` and evicts those written successfully.
pub fn enforce_capacity(
    memory: &mut Memory,
    policy: &CapacityPolicy,
    sink: &dyn ConsolidationSink,
    now: Time,
) -> EnforceReport {
    let mut report = EnforceReport::default();
    for sid in plan_evictions(memory, policy, now) {
        let entity_id = sid.entity_prefix().expect("snapshot id");
        let Some(entity) = memory.entity(&entity_id) else {
            continue;
        };
        let Some(snapshot) = memory.snapshot(&sid) else {
            continue;
        };
        let links: Vec<MemoryId> = entity.links_for(&sid).into_iter().collect();
        match sink.consolidate(&sid, snapshot, segment_type(memory, &sid), &links, now) {
            Ok(()) => {
                memory.remove_snapshot(&sid);
                report.consolidated.push(sid);
            }
            Err(e) => {
                tracing::error!("consolidation of {sid} failed: {e}");
                report.failed.push((sid, e));
            }
        }
    }
    report
}
