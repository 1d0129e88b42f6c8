use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::hash::{Hash, Hasher};

use crate::error::{CommitError, LinkError};
use crate::idf::{cast, codec, DataObject, Time, TypeObject};
use crate::model::id::{Level, MemoryId};

/// Where a snapshot's data currently lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tier {
    Wm,
    LtmOnline,
    LtmLatent,
    /// Produced by prediction; never stored.
    Synthetic,
}

impl Tier {
    pub fn name(self) -> &'static str {
        match self {
            Tier::Wm => "wm",
            Tier::LtmOnline => "ltm-online",
            Tier::LtmLatent => "ltm-latent",
            Tier::Synthetic => "synthetic",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "wm" => Tier::Wm,
            "ltm-online" => Tier::LtmOnline,
            "ltm-latent" => Tier::LtmLatent,
            "synthetic" => Tier::Synthetic,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceMetadata {
    pub provider: String,
    pub payload_size: u64,
    pub produced_at: Option<Time>,
    pub committed_at: Option<Time>,
    /// Time between production and arrival at the memory.
    pub transfer_us: Option<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityInstance {
    pub index: u32,
    pub data: DataObject,
    pub metadata: InstanceMetadata,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntitySnapshot {
    pub timestamp: Time,
    pub instances: Vec<EntityInstance>,
    pub tier: Tier,
}

impl EntitySnapshot {
    /// Builds a WM snapshot with consecutive instance indices.
    pub fn new(timestamp: Time, data: Vec<DataObject>, provider: &str) -> Self {
        let instances = data
            .into_iter()
            .enumerate()
            .map(|(i, data)| EntityInstance {
                index: i as u32,
                metadata: InstanceMetadata {
                    provider: provider.to_owned(),
                    payload_size: data.payload_size() as u64,
                    ..Default::default()
                },
                data,
            })
            .collect();
        EntitySnapshot {
            timestamp,
            instances,
            tier: Tier::Wm,
        }
    }

    pub fn payload_size(&self) -> usize {
        self.instances.iter().map(|i| i.data.payload_size()).sum()
    }

    pub fn data(&self) -> impl Iterator<Item = &DataObject> {
        self.instances.iter().map(|i| &i.data)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EntityStats {
    pub last_query_time: Option<Time>,
    pub query_count: u64,
    pub last_commit_time: Option<Time>,
    recent_queries: VecDeque<Time>,
}

/// Upper bound on remembered query times per entity.
const RECENT_QUERY_CAP: usize = 1024;

impl EntityStats {
    pub fn record_query(&mut self, now: Time) {
        self.query_count += 1;
        self.last_query_time = Some(now);
        if self.recent_queries.len() == RECENT_QUERY_CAP {
            self.recent_queries.pop_front();
        }
        self.recent_queries.push_back(now);
    }

    /// Number of queries in the closed window `[now - window_us, now]`.
    pub fn queries_within(&self, now: Time, window_us: i64) -> usize {
        let since = now.0.saturating_sub(window_us);
        self.recent_queries
            .iter()
            .filter(|t| t.0 >= since && t.0 <= now.0)
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub name: String,
    pub timeline: BTreeMap<Time, EntitySnapshot>,
    /// Associations keyed by the ID they were recorded from (this entity or deeper).
    pub links: BTreeMap<MemoryId, BTreeSet<MemoryId>>,
    pub stats: EntityStats,
}

impl Entity {
    pub fn new(name: impl Into<String>) -> Self {
        Entity {
            name: name.into(),
            timeline: BTreeMap::new(),
            links: BTreeMap::new(),
            stats: EntityStats::default(),
        }
    }

    pub fn latest(&self) -> Option<&EntitySnapshot> {
        self.timeline.values().next_back()
    }

    pub fn latest_time(&self) -> Option<Time> {
        self.timeline.keys().next_back().copied()
    }

    /// Union of all link targets recorded at or below `id`, plus those recorded
    /// at a prefix of `id` (entity-wide links apply to every snapshot).
    pub fn links_for(&self, id: &MemoryId) -> BTreeSet<MemoryId> {
        self.links
            .iter()
            .filter(|(from, _)| from.is_prefix_of(id) || id.is_prefix_of(from))
            .flat_map(|(_, to)| to.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderSegment {
    pub name: String,
    pub ty: Option<TypeObject>,
    pub entities: BTreeMap<String, Entity>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreSegment {
    pub name: String,
    pub ty: Option<TypeObject>,
    pub providers: BTreeMap<String, ProviderSegment>,
}

/// One write unit: a snapshot insertion or replacement for one entity.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityUpdate {
    pub entity_id: MemoryId,
    pub timestamp: Time,
    pub instances: Vec<DataObject>,
    pub produced_at: Option<Time>,
    /// Associations recorded from the new snapshot.
    pub links: Vec<MemoryId>,
}

impl EntityUpdate {
    pub fn new(entity_id: MemoryId, timestamp: Time, instances: Vec<DataObject>) -> Self {
        EntityUpdate {
            entity_id,
            timestamp,
            instances,
            produced_at: None,
            links: Vec::new(),
        }
    }

    pub fn produced_at(mut self, t: Time) -> Self {
        self.produced_at = Some(t);
        self
    }

    pub fn with_links(mut self, links: impl IntoIterator<Item = MemoryId>) -> Self {
        self.links.extend(links);
        self
    }

    pub fn snapshot_id(&self) -> Option<MemoryId> {
        self.entity_id.clone().with_timestamp(self.timestamp).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Commit {
    pub updates: Vec<EntityUpdate>,
}

impl Commit {
    pub fn new(updates: Vec<EntityUpdate>) -> Self {
        Commit { updates }
    }

    pub fn single(update: EntityUpdate) -> Self {
        Commit { updates: vec![update] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpdateNotification {
    pub seq: u64,
    pub ids: Vec<MemoryId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommitOutcome {
    pub notification: UpdateNotification,
    /// One entry per update, in commit order.
    pub statuses: Vec<Result<MemoryId, CommitError>>,
}

/// The working memory of one named memory: core segments, provider segments,
/// entities and their timelines.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    name: String,
    cores: BTreeMap<String, CoreSegment>,
    commit_seq: u64,
    payload_bytes: usize,
}

impl Memory {
    pub fn new(name: impl Into<String>) -> Self {
        Memory {
            name: name.into(),
            cores: BTreeMap::new(),
            commit_seq: 0,
            payload_bytes: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn id(&self) -> MemoryId {
        MemoryId::memory(self.name.clone()).expect("valid memory name")
    }

    pub fn declare_core_segment(&mut self, name: impl Into<String>, ty: Option<TypeObject>) {
        let name = name.into();
        self.cores
            .entry(name.clone())
            .and_modify(|c| c.ty = ty.clone())
            .or_insert_with(|| CoreSegment {
                name,
                ty,
                providers: BTreeMap::new(),
            });
    }

    /// Declares a provider segment with an extension type, which must keep every
    /// non-optional field of the core type.
    pub fn declare_provider_segment(
        &mut self,
        core: &str,
        provider: impl Into<String>,
        ty: Option<TypeObject>,
    ) -> Result<(), CommitError> {
        let provider = provider.into();
        let seg = self
            .cores
            .get_mut(core)
            .ok_or_else(|| CommitError::UnknownCoreSegment(core.to_owned()))?;
        if let (Some(core_ty), Some(ext)) = (&seg.ty, &ty) {
            for req in core_ty.required_fields() {
                let kept = ext
                    .fields()
                    .iter()
                    .any(|f| f.name == req.name && !f.optional && f.ty == req.ty);
                if !kept {
                    return Err(CommitError::ProviderTypeMismatch {
                        provider,
                        field: req.name.clone(),
                    });
                }
            }
        }
        let entry = seg
            .providers
            .entry(provider.clone())
            .or_insert_with(|| ProviderSegment {
                name: provider,
                ty: None,
                entities: BTreeMap::new(),
            });
        entry.ty = ty;
        Ok(())
    }

    pub fn core_segments(&self) -> impl Iterator<Item = &CoreSegment> {
        self.cores.values()
    }

    pub fn core_segment(&self, name: &str) -> Option<&CoreSegment> {
        self.cores.get(name)
    }

    pub fn commit_seq(&self) -> u64 {
        self.commit_seq
    }

    /// Sum of payload sizes of every snapshot held.
    pub fn payload_bytes(&self) -> usize {
        self.payload_bytes
    }

    pub fn entity(&self, id: &MemoryId) -> Option<&Entity> {
        self.cores
            .get(id.core_segment()?)?
            .providers
            .get(id.provider_segment()?)?
            .entities
            .get(id.entity_name()?)
    }

    fn entity_mut(&mut self, id: &MemoryId) -> Option<&mut Entity> {
        self.cores
            .get_mut(id.core_segment()?)?
            .providers
            .get_mut(id.provider_segment()?)?
            .entities
            .get_mut(id.entity_name()?)
    }

    pub fn snapshot(&self, id: &MemoryId) -> Option<&EntitySnapshot> {
        self.entity(id)?.timeline.get(&id.timestamp()?)
    }

    /// Every entity with its ID, in ID order.
    pub fn entities(&self) -> impl Iterator<Item = (MemoryId, &Entity)> + '_ {
        let mem = self.id();
        self.cores.values().flat_map(move |c| {
            let core_id = mem.clone().with_core(c.name.clone()).expect("valid name");
            c.providers.values().flat_map(move |p| {
                let prov_id = core_id.clone().with_provider(p.name.clone()).expect("valid name");
                p.entities
                    .values()
                    .map(move |e| (prov_id.clone().with_entity(e.name.clone()).expect("valid name"), e))
            })
        })
    }

    pub fn snapshot_count(&self) -> usize {
        self.entities().map(|(_, e)| e.timeline.len()).sum()
    }

    /// Applies each update independently. Failed updates leave the store untouched
    /// and are reported in the per-update status list.
    pub fn apply_commit(&mut self, commit: &Commit, now: Time) -> CommitOutcome {
        self.commit_seq += 1;
        let mut ids = Vec::new();
        let mut statuses = Vec::with_capacity(commit.updates.len());
        for update in &commit.updates {
            let status = self.apply_update(update, now);
            if let Ok(id) = &status {
                ids.push(id.clone());
            }
            statuses.push(status);
        }
        ids.sort();
        ids.dedup();
        CommitOutcome {
            notification: UpdateNotification {
                seq: self.commit_seq,
                ids,
            },
            statuses,
        }
    }

    fn apply_update(&mut self, update: &EntityUpdate, now: Time) -> Result<MemoryId, CommitError> {
        let id = &update.entity_id;
        if id.level() != Level::Entity {
            return Err(CommitError::NotEntityLevel(id.to_string()));
        }
        if id.memory_name() != self.name {
            return Err(CommitError::WrongMemory {
                expected: self.name.clone(),
                found: id.memory_name().to_owned(),
            });
        }
        if update.instances.is_empty() {
            return Err(CommitError::NoInstances);
        }
        let core_name = id.core_segment().expect("entity level");
        let provider = id.provider_segment().expect("entity level");
        let core = self
            .cores
            .get(core_name)
            .ok_or_else(|| CommitError::UnknownCoreSegment(core_name.to_owned()))?;
        let ty = core
            .providers
            .get(provider)
            .and_then(|p| p.ty.as_ref())
            .or(core.ty.as_ref());
        if let Some(ty) = ty {
            for (index, data) in update.instances.iter().enumerate() {
                match cast(data, ty) {
                    Ok(view) if view.is_complete() => {}
                    Ok(view) => {
                        return Err(CommitError::TypeConformance {
                            index,
                            missing: view.missing_required,
                        })
                    }
                    Err(e) => {
                        return Err(CommitError::TypeConformance {
                            index,
                            missing: vec![e.to_string()],
                        })
                    }
                }
            }
        }
        let snapshot_id = id.snapshot(update.timestamp);
        let entity_prefix = id.clone();
        for to in &update.links {
            if entity_prefix.is_prefix_of(to) {
                return Err(CommitError::Link(LinkError::SelfLink(to.to_string())));
            }
        }

        let mut snapshot = EntitySnapshot::new(update.timestamp, update.instances.clone(), provider);
        for inst in &mut snapshot.instances {
            inst.metadata.produced_at = update.produced_at;
            inst.metadata.committed_at = Some(now);
            inst.metadata.transfer_us = update.produced_at.map(|p| now.0 - p.0);
        }
        let added = snapshot.payload_size();

        let core = self.cores.get_mut(core_name).expect("checked above");
        let entity = core
            .providers
            .entry(provider.to_owned())
            .or_insert_with(|| ProviderSegment {
                name: provider.to_owned(),
                ty: None,
                entities: BTreeMap::new(),
            })
            .entities
            .entry(id.entity_name().expect("entity level").to_owned())
            .or_insert_with(|| Entity::new(id.entity_name().unwrap()));
        let removed = entity
            .timeline
            .insert(update.timestamp, snapshot)
            .map_or(0, |old| old.payload_size());
        entity.stats.last_commit_time = Some(now);
        if !update.links.is_empty() {
            entity
                .links
                .entry(snapshot_id.clone())
                .or_default()
                .extend(update.links.iter().cloned());
        }
        self.payload_bytes = self.payload_bytes + added - removed;
        Ok(snapshot_id)
    }

    /// Records a directed association from `from` (an entity or deeper) to `to`.
    pub fn link(&mut self, from: &MemoryId, to: &MemoryId) -> Result<(), LinkError> {
        let entity_id = from
            .entity_prefix()
            .ok_or_else(|| LinkError::UnknownSource(from.to_string()))?;
        if from.memory_name() != self.name {
            return Err(LinkError::UnknownSource(from.to_string()));
        }
        if entity_id.is_prefix_of(to) {
            return Err(LinkError::SelfLink(to.to_string()));
        }
        let entity = self
            .entity_mut(&entity_id)
            .ok_or_else(|| LinkError::UnknownSource(from.to_string()))?;
        entity.links.entry(from.clone()).or_default().insert(to.clone());
        Ok(())
    }

    pub fn links_of(&self, id: &MemoryId) -> Result<BTreeSet<MemoryId>, LinkError> {
        let entity_id = id
            .entity_prefix()
            .ok_or_else(|| LinkError::UnknownSource(id.to_string()))?;
        let entity = self
            .entity(&entity_id)
            .ok_or_else(|| LinkError::UnknownSource(id.to_string()))?;
        Ok(entity.links_for(id))
    }

    /// Bumps query statistics of each listed entity.
    pub fn record_access<'a>(&mut self, entities: impl IntoIterator<Item = &'a MemoryId>, now: Time) {
        for id in entities {
            if let Some(e) = self.entity_mut(id) {
                e.stats.record_query(now);
            }
        }
    }

    /// Inserts a snapshot verbatim, creating segments and entities as needed.
    /// Used to assemble detached query results and to restore recalled data.
    pub fn insert_snapshot(&mut self, entity_id: &MemoryId, snapshot: EntitySnapshot) {
        let (Some(core), Some(provider), Some(name)) = (
            entity_id.core_segment(),
            entity_id.provider_segment(),
            entity_id.entity_name(),
        ) else {
            return;
        };
        let added = snapshot.payload_size();
        let entity = self
            .cores
            .entry(core.to_owned())
            .or_insert_with(|| CoreSegment {
                name: core.to_owned(),
                ty: None,
                providers: BTreeMap::new(),
            })
            .providers
            .entry(provider.to_owned())
            .or_insert_with(|| ProviderSegment {
                name: provider.to_owned(),
                ty: None,
                entities: BTreeMap::new(),
            })
            .entities
            .entry(name.to_owned())
            .or_insert_with(|| Entity::new(name));
        let removed = entity
            .timeline
            .insert(snapshot.timestamp, snapshot)
            .map_or(0, |s| s.payload_size());
        self.payload_bytes = self.payload_bytes + added - removed;
    }

    /// Adds links recorded elsewhere (e.g. carried along with a query result).
    pub fn insert_links(&mut self, from: &MemoryId, to: impl IntoIterator<Item = MemoryId>) {
        if let Some(entity_id) = from.entity_prefix() {
            if let Some(e) = self.entity_mut(&entity_id) {
                e.links.entry(from.clone()).or_default().extend(to);
            }
        }
    }

    /// Removes one snapshot from the timeline, returning it.
    pub fn remove_snapshot(&mut self, id: &MemoryId) -> Option<EntitySnapshot> {
        let t = id.timestamp()?;
        let removed = self.entity_mut(id)?.timeline.remove(&t)?;
        self.payload_bytes -= removed.payload_size();
        Some(removed)
    }

    /// Hash over the stored content: hierarchy, snapshots, metadata and links.
    /// Access statistics and the commit counter are excluded.
    pub fn content_hash(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.name.hash(&mut h);
        for core in self.cores.values() {
            core.name.hash(&mut h);
            for p in core.providers.values() {
                p.name.hash(&mut h);
                for e in p.entities.values() {
                    e.name.hash(&mut h);
                    for (t, s) in &e.timeline {
                        t.hash(&mut h);
                        s.tier.hash(&mut h);
                        for i in &s.instances {
                            i.index.hash(&mut h);
                            codec::encode(&i.data).hash(&mut h);
                            i.metadata.provider.hash(&mut h);
                            i.metadata.payload_size.hash(&mut h);
                            i.metadata.produced_at.hash(&mut h);
                            i.metadata.committed_at.hash(&mut h);
                            i.metadata.transfer_us.hash(&mut h);
                        }
                    }
                    for (from, to) in &e.links {
                        from.hash(&mut h);
                        to.hash(&mut h);
                    }
                }
            }
        }
        h.finish()
    }
}
