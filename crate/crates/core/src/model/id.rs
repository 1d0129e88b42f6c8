use std::fmt;
use std::str::FromStr;

use crate::error::IdError;
use crate::idf::Time;

/// Hierarchical path key: `memory[/core[/provider[/entity[/timestamp[/index]]]]]`.
///
/// Components are prefix-complete. The derived ordering sorts every prefix
/// before its extensions and snapshots of one entity by timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemoryId {
    memory: String,
    core: Option<String>,
    provider: Option<String>,
    entity: Option<String>,
    timestamp: Option<Time>,
    instance: Option<u32>,
}

/// Depth of a [`MemoryId`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Memory = 1,
    CoreSegment = 2,
    ProviderSegment = 3,
    Entity = 4,
    Snapshot = 5,
    Instance = 6,
}

fn check_name(name: &str) -> Result<(), IdError> {
    if name.is_empty() {
        Err(IdError::EmptyComponent)
    } else if name.contains('/') {
        Err(IdError::Slash(name.to_owned()))
    } else {
        Ok(())
    }
}

impl MemoryId {
    pub fn memory(name: impl Into<String>) -> Result<Self, IdError> {
        let memory = name.into();
        check_name(&memory)?;
        Ok(MemoryId {
            memory,
            core: None,
            provider: None,
            entity: None,
            timestamp: None,
            instance: None,
        })
    }

    /// Builds an entity-level ID.
    pub fn entity_id(memory: &str, core: &str, provider: &str, entity: &str) -> Result<Self, IdError> {
        MemoryId::memory(memory)?
            .with_core(core)?
            .with_provider(provider)?
            .with_entity(entity)
    }

    pub fn with_core(mut self, name: impl Into<String>) -> Result<Self, IdError> {
        let name = name.into();
        check_name(&name)?;
        self.truncate(Level::Memory);
        self.core = Some(name);
        Ok(self)
    }

    pub fn with_provider(mut self, name: impl Into<String>) -> Result<Self, IdError> {
        let name = name.into();
        check_name(&name)?;
        if self.level() < Level::CoreSegment {
            return Err(IdError::NotPrefixComplete);
        }
        self.truncate(Level::CoreSegment);
        self.provider = Some(name);
        Ok(self)
    }

    pub fn with_entity(mut self, name: impl Into<String>) -> Result<Self, IdError> {
        let name = name.into();
        check_name(&name)?;
        if self.level() < Level::ProviderSegment {
            return Err(IdError::NotPrefixComplete);
        }
        self.truncate(Level::ProviderSegment);
        self.entity = Some(name);
        Ok(self)
    }

    pub fn with_timestamp(mut self, t: Time) -> Result<Self, IdError> {
        if self.level() < Level::Entity {
            return Err(IdError::NotPrefixComplete);
        }
        self.truncate(Level::Entity);
        self.timestamp = Some(t);
        Ok(self)
    }

    pub fn with_instance(mut self, index: u32) -> Result<Self, IdError> {
        if self.level() < Level::Snapshot {
            return Err(IdError::NotPrefixComplete);
        }
        self.instance = Some(index);
        Ok(self)
    }

    /// Snapshot-level child of an entity ID. Panics if `self` is not at least entity level.
    pub fn snapshot(&self, t: Time) -> MemoryId {
        self.clone().with_timestamp(t).expect("entity-level id")
    }

    pub fn memory_name(&self) -> &str {
        &self.memory
    }

    pub fn core_segment(&self) -> Option<&str> {
        self.core.as_deref()
    }

    pub fn provider_segment(&self) -> Option<&str> {
        self.provider.as_deref()
    }

    pub fn entity_name(&self) -> Option<&str> {
        self.entity.as_deref()
    }

    pub fn timestamp(&self) -> Option<Time> {
        self.timestamp
    }

    pub fn instance_index(&self) -> Option<u32> {
        self.instance
    }

    pub fn level(&self) -> Level {
        if self.instance.is_some() {
            Level::Instance
        } else if self.timestamp.is_some() {
            Level::Snapshot
        } else if self.entity.is_some() {
            Level::Entity
        } else if self.provider.is_some() {
            Level::ProviderSegment
        } else if self.core.is_some() {
            Level::CoreSegment
        } else {
            Level::Memory
        }
    }

    /// Drops every component below `level`.
    pub fn truncate(&mut self, level: Level) {
        if level < Level::Instance {
            self.instance = None;
        }
        if level < Level::Snapshot {
            self.timestamp = None;
        }
        if level < Level::Entity {
            self.entity = None;
        }
        if level < Level::ProviderSegment {
            self.provider = None;
        }
        if level < Level::CoreSegment {
            self.core = None;
        }
    }

    /// Copy truncated at `level`; `None` when `self` is shallower than `level`.
    pub fn truncated(&self, level: Level) -> Option<MemoryId> {
        if self.level() < level {
            return None;
        }
        let mut id = self.clone();
        id.truncate(level);
        Some(id)
    }

    pub fn entity_prefix(&self) -> Option<MemoryId> {
        self.truncated(Level::Entity)
    }

    /// True if every component set in `self` equals the same component of `other`.
    pub fn is_prefix_of(&self, other: &MemoryId) -> bool {
        fn part<T: PartialEq>(a: &Option<T>, b: &Option<T>) -> bool {
            a.is_none() || a == b
        }
        self.memory == other.memory
            && part(&self.core, &other.core)
            && part(&self.provider, &other.provider)
            && part(&self.entity, &other.entity)
            && part(&self.timestamp, &other.timestamp)
            && part(&self.instance, &other.instance)
    }

    pub fn parse(text: &str) -> Result<Self, IdError> {
        let parts: Vec<&str> = text.split('/').collect();
        if parts.len() > 6 {
            return Err(IdError::TooManyComponents(parts.len()));
        }
        if parts.iter().any(|p| p.is_empty()) {
            return Err(IdError::EmptyComponent);
        }
        let mut id = MemoryId::memory(parts[0])?;
        if let Some(core) = parts.get(1) {
            id = id.with_core(*core)?;
        }
        if let Some(provider) = parts.get(2) {
            id = id.with_provider(*provider)?;
        }
        if let Some(entity) = parts.get(3) {
            id = id.with_entity(*entity)?;
        }
        if let Some(ts) = parts.get(4) {
            let t = Time::parse(ts).ok_or_else(|| IdError::BadTimestamp((*ts).to_owned()))?;
            id = id.with_timestamp(t)?;
        }
        if let Some(idx) = parts.get(5) {
            let index = if idx.bytes().all(|b| b.is_ascii_digit()) {
                idx.parse::<u32>().ok()
            } else {
                None
            };
            let index = index.ok_or_else(|| IdError::BadIndex((*idx).to_owned()))?;
            id = id.with_instance(index)?;
        }
        Ok(id)
    }
}

impl fmt::Display for MemoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.memory)?;
        for part in [&self.core, &self.provider, &self.entity].into_iter().flatten() {
            write!(f, "/{part}")?;
        }
        if let Some(t) = self.timestamp {
            write!(f, "/{t}")?;
        }
        if let Some(i) = self.instance {
            write!(f, "/{i}")?;
        }
        Ok(())
    }
}

impl FromStr for MemoryId {
    type Err = IdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MemoryId::parse(s)
    }
}
