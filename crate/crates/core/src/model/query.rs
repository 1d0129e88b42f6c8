//! Tree-structured queries mirroring the memory hierarchy.
//!
//! Every level holds a list of child branches; the snapshot IDs matched by
//! sibling branches are unioned. An empty child list selects everything below
//! (all snapshots, all instances).

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;

use crate::error::QueryError;
use crate::idf::Time;
use crate::model::id::MemoryId;
use crate::model::memory::{Entity, EntitySnapshot, Memory};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NameSelector {
    All,
    Exact(String),
    /// Full-string match.
    Regex(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotSelector {
    Latest,
    LatestN(usize),
    AtTime(Time),
    BeforeOrAt(Time),
    /// Inclusive on both ends.
    TimeRange(Time, Time),
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceSelector {
    All,
    Index(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotQuery {
    pub selector: SnapshotSelector,
    pub instances: InstanceSelector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityQuery {
    pub name: NameSelector,
    pub snapshots: Vec<SnapshotQuery>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderQuery {
    pub name: NameSelector,
    pub entities: Vec<EntityQuery>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreQuery {
    pub name: NameSelector,
    pub providers: Vec<ProviderQuery>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Query {
    pub cores: Vec<CoreQuery>,
    /// Attach the association links of every returned snapshot.
    pub with_links: bool,
}

impl SnapshotQuery {
    pub fn new(selector: SnapshotSelector) -> Self {
        SnapshotQuery {
            selector,
            instances: InstanceSelector::All,
        }
    }
}

fn exact_or_all(name: Option<&str>) -> NameSelector {
    name.map_or(NameSelector::All, |n| NameSelector::Exact(n.to_owned()))
}

impl Query {
    /// Everything below `prefix` (memory level or deeper). Snapshot and instance
    /// components of `prefix` override `selector`.
    pub fn prefix(prefix: &MemoryId, selector: SnapshotSelector) -> Self {
        let selector = prefix.timestamp().map_or(selector, SnapshotSelector::AtTime);
        let instances = prefix
            .instance_index()
            .map_or(InstanceSelector::All, InstanceSelector::Index);
        Query {
            cores: vec![CoreQuery {
                name: exact_or_all(prefix.core_segment()),
                providers: vec![ProviderQuery {
                    name: exact_or_all(prefix.provider_segment()),
                    entities: vec![EntityQuery {
                        name: exact_or_all(prefix.entity_name()),
                        snapshots: vec![SnapshotQuery { selector, instances }],
                    }],
                }],
            }],
            with_links: false,
        }
    }

    /// Everything in the memory, every snapshot.
    pub fn all() -> Self {
        Query::default().or(CoreQuery {
            name: NameSelector::All,
            providers: vec![],
        })
    }

    /// Query for exactly the given snapshot IDs.
    pub fn snapshots<'a>(ids: impl IntoIterator<Item = &'a MemoryId>) -> Self {
        let mut q = Query::default();
        for id in ids {
            q.cores.extend(Query::prefix(id, SnapshotSelector::All).cores);
        }
        q
    }

    pub fn or(mut self, branch: CoreQuery) -> Self {
        self.cores.push(branch);
        self
    }

    pub fn with_links(mut self) -> Self {
        self.with_links = true;
        self
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        Compiled::new(self).map(|_| ())
    }

    /// Snapshot selectors used anywhere in the tree.
    pub fn snapshot_selectors(&self) -> Vec<SnapshotSelector> {
        self.cores
            .iter()
            .flat_map(|c| &c.providers)
            .flat_map(|p| &p.entities)
            .flat_map(|e| &e.snapshots)
            .map(|s| s.selector)
            .collect()
    }
}

enum Matcher {
    All,
    Exact(String),
    Regex(Regex),
}

impl Matcher {
    fn new(sel: &NameSelector) -> Result<Self, QueryError> {
        Ok(match sel {
            NameSelector::All => Matcher::All,
            NameSelector::Exact(n) => Matcher::Exact(n.clone()),
            NameSelector::Regex(p) => {
                Matcher::Regex(Regex::new(&format!("^(?:{p})$")).map_err(|e| QueryError::BadRegex {
                    pattern: p.clone(),
                    message: e.to_string(),
                })?)
            }
        })
    }

    fn matches(&self, name: &str) -> bool {
        match self {
            Matcher::All => true,
            Matcher::Exact(n) => n == name,
            Matcher::Regex(r) => r.is_match(name),
        }
    }
}

type EntityBranch = (Matcher, Vec<SnapshotQuery>);
type ProviderBranch = (Matcher, Vec<EntityBranch>);

struct Compiled {
    cores: Vec<(Matcher, Vec<ProviderBranch>)>,
}

const ALL_SNAPSHOTS: SnapshotQuery = SnapshotQuery {
    selector: SnapshotSelector::All,
    instances: InstanceSelector::All,
};

impl Compiled {
    fn new(q: &Query) -> Result<Self, QueryError> {
        let check = |s: &SnapshotQuery| match s.selector {
            SnapshotSelector::LatestN(0) => Err(QueryError::ZeroLatestN),
            SnapshotSelector::TimeRange(a, b) if a > b => Err(QueryError::InvertedRange(a, b)),
            _ => Ok(s.clone()),
        };
        let mut cores = Vec::new();
        for c in &q.cores {
            let mut providers = Vec::new();
            let pqs = if c.providers.is_empty() {
                vec![ProviderQuery {
                    name: NameSelector::All,
                    entities: vec![],
                }]
            } else {
                c.providers.clone()
            };
            for p in &pqs {
                let mut entities = Vec::new();
                let eqs = if p.entities.is_empty() {
                    vec![EntityQuery {
                        name: NameSelector::All,
                        snapshots: vec![],
                    }]
                } else {
                    p.entities.clone()
                };
                for e in &eqs {
                    let snaps = if e.snapshots.is_empty() {
                        vec![ALL_SNAPSHOTS]
                    } else {
                        e.snapshots.iter().map(check).collect::<Result<_, _>>()?
                    };
                    entities.push((Matcher::new(&e.name)?, snaps));
                }
                providers.push((Matcher::new(&p.name)?, entities));
            }
            cores.push((Matcher::new(&c.name)?, providers));
        }
        Ok(Compiled { cores })
    }
}

/// Picks timestamps out of an ascending, duplicate-free timeline.
pub fn select_times(timeline: &[Time], selector: SnapshotSelector) -> Vec<Time> {
    match selector {
        SnapshotSelector::Latest => timeline.last().copied().into_iter().collect(),
        SnapshotSelector::LatestN(n) => timeline[timeline.len().saturating_sub(n)..].to_vec(),
        SnapshotSelector::AtTime(t) => timeline.binary_search(&t).map(|_| vec![t]).unwrap_or_default(),
        SnapshotSelector::BeforeOrAt(t) => {
            let end = timeline.partition_point(|x| *x <= t);
            if end == 0 {
                vec![]
            } else {
                vec![timeline[end - 1]]
            }
        }
        SnapshotSelector::TimeRange(a, b) => {
            let lo = timeline.partition_point(|x| *x < a);
            let hi = timeline.partition_point(|x| *x <= b);
            timeline[lo..hi.max(lo)].to_vec()
        }
        SnapshotSelector::All => timeline.to_vec(),
    }
}

/// Snapshots held outside the working memory, e.g. in the long-term tier.
pub trait History {
    /// Ascending timestamps of `entity` known to this source.
    fn timestamps(&self, entity: &MemoryId) -> Vec<Time>;
    fn recall(&self, snapshot: &MemoryId) -> Result<EntitySnapshot, String>;
}

/// A detached copy of the matched part of a memory.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub memory: Memory,
    /// Matched snapshot IDs in ascending order.
    pub ids: Vec<MemoryId>,
    /// Links per returned snapshot, when requested.
    pub links: BTreeMap<MemoryId, BTreeSet<MemoryId>>,
    /// Per-ID problems that did not fail the query (recall failures, prediction status).
    pub statuses: Vec<(MemoryId, String)>,
    /// Entities with at least one matched snapshot.
    pub touched: Vec<MemoryId>,
}

impl QueryResult {
    pub fn empty(memory_name: &str) -> Self {
        QueryResult {
            memory: Memory::new(memory_name),
            ids: Vec::new(),
            links: BTreeMap::new(),
            statuses: Vec::new(),
            touched: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn snapshot(&self, id: &MemoryId) -> Option<&EntitySnapshot> {
        self.memory.snapshot(id)
    }

    /// Snapshots in ID order.
    pub fn snapshots(&self) -> impl Iterator<Item = (&MemoryId, &EntitySnapshot)> {
        self.ids
            .iter()
            .filter_map(|id| self.memory.snapshot(id).map(|s| (id, s)))
    }
}

type Selection = BTreeMap<MemoryId, Option<BTreeSet<u32>>>;

/// Resolves `q` against the working memory only.
pub fn resolve_query(memory: &Memory, q: &Query) -> Result<QueryResult, QueryError> {
    resolve_query_with(memory, q, None)
}

/// Resolves `q` over the union of the working memory and `history`, recalling
/// snapshots not resident in WM.
pub fn resolve_query_with(
    memory: &Memory,
    q: &Query,
    history: Option<&dyn History>,
) -> Result<QueryResult, QueryError> {
    let compiled = Compiled::new(q)?;
    let mut selection: Selection = BTreeMap::new();
    for (entity_id, entity, snaps) in matched_entities(memory, &compiled) {
        let tl = merged_timeline(entity, &entity_id, history);
        for sq in snaps {
            for t in select_times(&tl, sq.selector) {
                let sid = entity_id.snapshot(t);
                let slot = selection.entry(sid).or_insert_with(|| Some(BTreeSet::new()));
                match (sq.instances, slot.as_mut()) {
                    (InstanceSelector::All, _) => *slot = None,
                    (InstanceSelector::Index(i), Some(set)) => {
                        set.insert(i);
                    }
                    (InstanceSelector::Index(_), None) => {}
                }
            }
        }
    }

    let mut result = QueryResult::empty(memory.name());
    let mut touched = BTreeSet::new();
    for (sid, instances) in selection {
        let entity_id = sid.entity_prefix().expect("snapshot id");
        let entity = memory.entity(&entity_id).expect("selected from memory");
        let resident = entity.timeline.get(&sid.timestamp().expect("snapshot id"));
        let snapshot = match resident {
            Some(s) => s.clone(),
            None => match history.map(|h| h.recall(&sid)) {
                Some(Ok(s)) => s,
                Some(Err(e)) => {
                    result.statuses.push((sid, e));
                    continue;
                }
                None => continue,
            },
        };
        let snapshot = match instances {
            None => snapshot,
            Some(keep) => {
                let instances: Vec<_> = snapshot
                    .instances
                    .into_iter()
                    .filter(|i| keep.contains(&i.index))
                    .collect();
                if instances.is_empty() {
                    continue;
                }
                EntitySnapshot { instances, ..snapshot }
            }
        };
        result.memory.insert_snapshot(&entity_id, snapshot);
        if q.with_links {
            let links = entity.links_for(&sid);
            result.memory.insert_links(&sid, links.iter().cloned());
            result.links.insert(sid.clone(), links);
        }
        touched.insert(entity_id);
        result.ids.push(sid);
    }
    result.touched = touched.into_iter().collect();
    Ok(result)
}

/// Values of `map` whose key some matcher accepts, in key order. Exact
/// matchers are answered by lookup instead of a scan.
fn select<'m, V>(map: &'m BTreeMap<String, V>, matchers: &[&Matcher]) -> Vec<&'m V> {
    let exact: Option<BTreeSet<&str>> = matchers
        .iter()
        .map(|m| match m {
            Matcher::Exact(n) => Some(n.as_str()),
            _ => None,
        })
        .collect();
    match exact {
        Some(names) => names.into_iter().filter_map(|n| map.get(n)).collect(),
        None => map
            .iter()
            .filter(|(k, _)| matchers.iter().any(|m| m.matches(k)))
            .map(|(_, v)| v)
            .collect(),
    }
}

/// Entities matched by any branch, with the snapshot queries of every matching branch.
fn matched_entities<'m>(memory: &'m Memory, compiled: &Compiled) -> Vec<(MemoryId, &'m Entity, Vec<SnapshotQuery>)> {
    let mem_id = memory.id();
    let mut out = Vec::new();
    for core in memory.core_segments() {
        let core_branches: Vec<_> = compiled.cores.iter().filter(|(m, _)| m.matches(&core.name)).collect();
        if core_branches.is_empty() {
            continue;
        }
        let prov_matchers: Vec<&Matcher> = core_branches
            .iter()
            .flat_map(|(_, ps)| ps.iter().map(|(m, _)| m))
            .collect();
        for prov in select(&core.providers, &prov_matchers) {
            let entity_matchers: Vec<&Matcher> = core_branches
                .iter()
                .flat_map(|(_, ps)| ps.iter().filter(|(pm, _)| pm.matches(&prov.name)))
                .flat_map(|(_, es)| es.iter().map(|(m, _)| m))
                .collect();
            for entity in select(&prov.entities, &entity_matchers) {
                let mut snaps = Vec::new();
                for (_, providers) in &core_branches {
                    for (pm, entities) in providers {
                        if !pm.matches(&prov.name) {
                            continue;
                        }
                        for (em, sqs) in entities {
                            if em.matches(&entity.name) {
                                snaps.extend(sqs.iter().cloned());
                            }
                        }
                    }
                }
                if !snaps.is_empty() {
                    let entity_id = mem_id
                        .clone()
                        .with_core(core.name.clone())
                        .and_then(|i| i.with_provider(prov.name.clone()))
                        .and_then(|i| i.with_entity(entity.name.clone()))
                        .expect("names stored in memory are valid");
                    out.push((entity_id, entity, snaps));
                }
            }
        }
    }
    out
}

/// `AtTime` requests that lie after the newest known snapshot of a matched
/// entity, as (entity, requested time, instance selector).
pub fn future_requests(
    memory: &Memory,
    q: &Query,
    history: Option<&dyn History>,
) -> Result<Vec<(MemoryId, Time, InstanceSelector)>, QueryError> {
    let compiled = Compiled::new(q)?;
    let mut out = Vec::new();
    for (entity_id, entity, snaps) in matched_entities(memory, &compiled) {
        let newest = merged_timeline(entity, &entity_id, history).last().copied();
        for sq in snaps {
            if let SnapshotSelector::AtTime(t) = sq.selector {
                if newest.is_none_or(|n| t > n) {
                    out.push((entity_id.clone(), t, sq.instances));
                }
            }
        }
    }
    Ok(out)
}

fn merged_timeline(entity: &Entity, entity_id: &MemoryId, history: Option<&dyn History>) -> Vec<Time> {
    let mut tl: Vec<Time> = entity.timeline.keys().copied().collect();
    if let Some(h) = history {
        let extra = h.timestamps(entity_id);
        if !extra.is_empty() {
            tl.extend(extra);
            tl.sort_unstable();
            tl.dedup();
        }
    }
    tl
}

impl Memory {
    /// Resolves `q` and records the access on every touched entity.
    pub fn query(&mut self, q: &Query, now: Time) -> Result<QueryResult, QueryError> {
        let result = resolve_query(self, q)?;
        self.record_access(&result.touched, now);
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::idf::DataObject;
    use crate::model::id::Level;
    use crate::model::memory::{Commit, EntityUpdate};

    fn memory_with(entities: &[(&str, &[i64])]) -> Memory {
        let mut m = Memory::new("M");
        m.declare_core_segment("C", None);
        m.declare_core_segment("D", None);
        for (name, times) in entities {
            for t in *times {
                let id = MemoryId::parse(name).unwrap();
                m.apply_commit(
                    &Commit::single(EntityUpdate::new(
                        id,
                        Time(*t),
                        vec![DataObject::Int64(*t), DataObject::Int64(-*t)],
                    )),
                    Time(0),
                );
            }
        }
        m
    }

    fn entity_q(entity: &str, selector: SnapshotSelector) -> Query {
        Query::prefix(&MemoryId::parse(entity).unwrap(), selector)
    }

    fn times(r: &QueryResult) -> Vec<i64> {
        r.ids.iter().map(|i| i.timestamp().unwrap().0).collect()
    }

    #[test]
    fn latest_picks_maximum() {
        let m = memory_with(&[("M/C/p/e", &[1, 2, 3])]);
        let r = resolve_query(&m, &entity_q("M/C/p/e", SnapshotSelector::Latest)).unwrap();
        assert_eq!(times(&r), vec![3]);
    }

    #[test]
    fn snapshot_selectors() {
        let m = memory_with(&[("M/C/p/e", &[10, 20, 30, 40])]);
        let run = |s| times(&resolve_query(&m, &entity_q("M/C/p/e", s)).unwrap());
        assert_eq!(run(SnapshotSelector::LatestN(2)), vec![30, 40]);
        assert_eq!(run(SnapshotSelector::LatestN(9)), vec![10, 20, 30, 40]);
        assert_eq!(run(SnapshotSelector::AtTime(Time(20))), vec![20]);
        assert_eq!(run(SnapshotSelector::AtTime(Time(25))), Vec::<i64>::new());
        assert_eq!(run(SnapshotSelector::BeforeOrAt(Time(25))), vec![20]);
        assert_eq!(run(SnapshotSelector::BeforeOrAt(Time(5))), Vec::<i64>::new());
        assert_eq!(run(SnapshotSelector::TimeRange(Time(20), Time(30))), vec![20, 30]);
        assert_eq!(run(SnapshotSelector::All), vec![10, 20, 30, 40]);
    }

    #[test]
    fn regex_matches_full_names() {
        let m = memory_with(&[("M/C/p/blue-cup", &[1]), ("M/C/p/bottle", &[1])]);
        let q = Query::default().or(CoreQuery {
            name: NameSelector::All,
            providers: vec![ProviderQuery {
                name: NameSelector::All,
                entities: vec![EntityQuery {
                    name: NameSelector::Regex("blue-.*".into()),
                    snapshots: vec![],
                }],
            }],
        });
        let r = resolve_query(&m, &q).unwrap();
        assert_eq!(r.ids.len(), 1);
        assert_eq!(r.ids[0].entity_name(), Some("blue-cup"));
        let partial = Query::default().or(CoreQuery {
            name: NameSelector::Regex("C|X".into()),
            providers: vec![ProviderQuery {
                name: NameSelector::Regex("p".into()),
                entities: vec![EntityQuery {
                    name: NameSelector::Regex("bott".into()),
                    snapshots: vec![],
                }],
            }],
        });
        assert!(resolve_query(&m, &partial).unwrap().is_empty());
    }

    #[test]
    fn malformed_regex_is_an_error() {
        let m = memory_with(&[]);
        let q = Query::default().or(CoreQuery {
            name: NameSelector::Regex("(".into()),
            providers: vec![],
        });
        assert!(matches!(resolve_query(&m, &q), Err(QueryError::BadRegex { .. })));
    }

    #[test]
    fn invalid_selectors() {
        let m = memory_with(&[]);
        assert_eq!(
            resolve_query(&m, &entity_q("M/C/p/e", SnapshotSelector::LatestN(0))),
            Err(QueryError::ZeroLatestN)
        );
        assert!(resolve_query(&m, &entity_q("M/C/p/e", SnapshotSelector::TimeRange(Time(2), Time(1)))).is_err());
    }

    #[test]
    fn branches_union() {
        let m = memory_with(&[("M/C/p/a", &[1, 2]), ("M/D/p/b", &[5])]);
        let q = Query::default()
            .or(entity_q("M/C/p/a", SnapshotSelector::Latest).cores.remove(0))
            .or(entity_q("M/C/p/a", SnapshotSelector::AtTime(Time(1))).cores.remove(0))
            .or(entity_q("M/D", SnapshotSelector::All).cores.remove(0));
        let r = resolve_query(&m, &q).unwrap();
        assert_eq!(times(&r), vec![1, 2, 5]);
        assert_eq!(r.touched.len(), 2);
    }

    #[test]
    fn instance_selection() {
        let m = memory_with(&[("M/C/p/a", &[1])]);
        let id = MemoryId::parse("M/C/p/a/1/1").unwrap();
        let r = resolve_query(&m, &Query::prefix(&id, SnapshotSelector::Latest)).unwrap();
        let snap = r.snapshot(&id.truncated(Level::Snapshot).unwrap()).unwrap();
        assert_eq!(snap.instances.len(), 1);
        assert_eq!(snap.instances[0].index, 1);
        assert_eq!(snap.instances[0].data, DataObject::Int64(-1));
        let missing = MemoryId::parse("M/C/p/a/1/7").unwrap();
        assert!(resolve_query(&m, &Query::prefix(&missing, SnapshotSelector::Latest))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn empty_memory_yields_empty_result() {
        let m = memory_with(&[]);
        assert!(resolve_query(&m, &Query::all()).unwrap().is_empty());
    }

    #[test]
    fn query_records_access_only_on_touched() {
        let mut m = memory_with(&[("M/C/p/a", &[1]), ("M/C/p/b", &[1])]);
        let a = MemoryId::parse("M/C/p/a").unwrap();
        let b = MemoryId::parse("M/C/p/b").unwrap();
        assert_eq!(m.entity(&a).unwrap().stats.query_count, 0);
        for i in 0..3 {
            m.query(&entity_q("M/C/p/a", SnapshotSelector::Latest), Time(i))
                .unwrap();
        }
        m.query(&entity_q("M/C/p/zzz", SnapshotSelector::Latest), Time(9))
            .unwrap();
        assert_eq!(m.entity(&a).unwrap().stats.query_count, 3);
        assert_eq!(m.entity(&b).unwrap().stats.query_count, 0);
    }

    #[test]
    fn results_are_detached() {
        let mut m = memory_with(&[("M/C/p/a", &[1])]);
        let r = resolve_query(&m, &Query::all()).unwrap();
        m.apply_commit(
            &Commit::single(EntityUpdate::new(
                MemoryId::parse("M/C/p/a").unwrap(),
                Time(1),
                vec![DataObject::Null],
            )),
            Time(1),
        );
        let (_, s) = r.snapshots().next().unwrap();
        assert_eq!(s.instances[0].data, DataObject::Int64(1));
    }

    struct FakeHistory;

    impl History for FakeHistory {
        fn timestamps(&self, _: &MemoryId) -> Vec<Time> {
            vec![Time(-5), Time(-1)]
        }

        fn recall(&self, id: &MemoryId) -> Result<EntitySnapshot, String> {
            if id.timestamp() == Some(Time(-1)) {
                return Err("corrupt".into());
            }
            Ok(EntitySnapshot::new(
                id.timestamp().unwrap(),
                vec![DataObject::Bool(true)],
                "p",
            ))
        }
    }

    #[test]
    fn history_is_merged_and_failures_reported() {
        let m = memory_with(&[("M/C/p/a", &[1])]);
        let r = resolve_query_with(&m, &entity_q("M/C/p/a", SnapshotSelector::All), Some(&FakeHistory)).unwrap();
        assert_eq!(times(&r), vec![-5, 1]);
        assert_eq!(r.statuses.len(), 1);
        let r = resolve_query_with(&m, &entity_q("M/C/p/a", SnapshotSelector::Latest), Some(&FakeHistory)).unwrap();
        assert_eq!(times(&r), vec![1]);
    }
}
