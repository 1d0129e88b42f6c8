//! Message payloads: conversions between protocol structs and their Map form.

use std::collections::{BTreeMap, BTreeSet};

use epimem_core::ltm::record::{metadata_from_data, metadata_to_data};
use epimem_core::model::{
    Commit, CoreQuery, EntityInstance, EntityQuery, EntitySnapshot, EntityUpdate, InstanceSelector, NameSelector,
    ProviderQuery, Query, QueryResult, SnapshotQuery, SnapshotSelector, Tier,
};
use epimem_core::{DataObject, Memory, MemoryId, Time};

use crate::error::NetError;
use crate::frame::{Frame, MsgType};

type R<T> = Result<T, NetError>;

fn bad(msg: impl Into<String>) -> NetError {
    NetError::Protocol(msg.into())
}

pub(crate) fn field<'a>(v: &'a DataObject, key: &str) -> R<&'a DataObject> {
    v.get(key).ok_or_else(|| bad(format!("missing key {key:?}")))
}

pub(crate) fn str_field<'a>(v: &'a DataObject, key: &str) -> R<&'a str> {
    field(v, key)?
        .as_str()
        .ok_or_else(|| bad(format!("{key:?} is not a string")))
}

pub(crate) fn int_field(v: &DataObject, key: &str) -> R<i64> {
    field(v, key)?
        .as_i64()
        .ok_or_else(|| bad(format!("{key:?} is not an integer")))
}

fn list_field<'a>(v: &'a DataObject, key: &str) -> R<&'a [DataObject]> {
    field(v, key)?
        .as_list()
        .ok_or_else(|| bad(format!("{key:?} is not a list")))
}

fn time_field(v: &DataObject, key: &str) -> R<Time> {
    match field(v, key)? {
        DataObject::Time(t) => Ok(*t),
        DataObject::Int64(t) => Ok(Time(*t)),
        _ => Err(bad(format!("{key:?} is not a time"))),
    }
}

fn id_of(v: &DataObject) -> R<MemoryId> {
    let s = v.as_str().ok_or_else(|| bad("id is not a string"))?;
    Ok(MemoryId::parse(s)?)
}

fn ids_to_data<'a>(ids: impl IntoIterator<Item = &'a MemoryId>) -> DataObject {
    DataObject::List(ids.into_iter().map(|i| DataObject::string(i.to_string())).collect())
}

fn ids_from(v: &DataObject, key: &str) -> R<Vec<MemoryId>> {
    list_field(v, key)?.iter().map(id_of).collect()
}

// ---- commit ----

pub fn commit_to_data(c: &Commit) -> DataObject {
    let updates = c
        .updates
        .iter()
        .map(|u| {
            let mut m = BTreeMap::new();
            m.insert("entity_id".to_owned(), DataObject::string(u.entity_id.to_string()));
            m.insert("timestamp".to_owned(), DataObject::Time(u.timestamp));
            m.insert("instances".to_owned(), DataObject::List(u.instances.clone()));
            if let Some(p) = u.produced_at {
                m.insert("produced_at".to_owned(), DataObject::Time(p));
            }
            if !u.links.is_empty() {
                m.insert("links".to_owned(), ids_to_data(&u.links));
            }
            DataObject::Map(m)
        })
        .collect();
    DataObject::map([("updates", DataObject::List(updates))])
}

pub fn commit_from_data(v: &DataObject) -> R<Commit> {
    let updates = list_field(v, "updates")?
        .iter()
        .map(|u| {
            Ok(EntityUpdate {
                entity_id: id_of(field(u, "entity_id")?)?,
                timestamp: time_field(u, "timestamp")?,
                instances: list_field(u, "instances")?.to_vec(),
                produced_at: u.get("produced_at").map(|_| time_field(u, "produced_at")).transpose()?,
                links: if u.get("links").is_some() {
                    ids_from(u, "links")?
                } else {
                    Vec::new()
                },
            })
        })
        .collect::<R<_>>()?;
    Ok(Commit { updates })
}

/// Outcome of one update as seen by the committer.
pub type UpdateStatus = Result<MemoryId, RemoteError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommitReply {
    pub seq: u64,
    pub statuses: Vec<UpdateStatus>,
    /// Server-side time spent applying the commit.
    pub storage_us: i64,
}

impl CommitReply {
    pub fn to_data(&self) -> DataObject {
        let statuses = self
            .statuses
            .iter()
            .map(|s| match s {
                Ok(id) => DataObject::map([("id", DataObject::string(id.to_string()))]),
                Err(e) => DataObject::map([
                    ("code", DataObject::string(&e.code)),
                    ("message", DataObject::string(&e.message)),
                ]),
            })
            .collect();
        DataObject::map([
            ("seq", DataObject::Int64(self.seq as i64)),
            ("statuses", DataObject::List(statuses)),
            ("storage_us", DataObject::Int64(self.storage_us)),
        ])
    }

    pub fn from_data(v: &DataObject) -> R<Self> {
        let statuses = list_field(v, "statuses")?
            .iter()
            .map(|s| match s.get("id") {
                Some(id) => Ok(Ok(id_of(id)?)),
                None => Ok(Err(RemoteError {
                    code: str_field(s, "code")?.to_owned(),
                    message: str_field(s, "message")?.to_owned(),
                })),
            })
            .collect::<R<_>>()?;
        Ok(CommitReply {
            seq: int_field(v, "seq")? as u64,
            statuses,
            storage_us: int_field(v, "storage_us")?,
        })
    }

    pub fn accepted(&self) -> impl Iterator<Item = &MemoryId> {
        self.statuses.iter().filter_map(|s| s.as_ref().ok())
    }
}

// ---- query ----

fn name_to_data(n: &NameSelector) -> DataObject {
    match n {
        NameSelector::All => DataObject::map([("kind", DataObject::string("all"))]),
        NameSelector::Exact(s) => {
            DataObject::map([("kind", DataObject::string("exact")), ("value", DataObject::string(s))])
        }
        NameSelector::Regex(s) => {
            DataObject::map([("kind", DataObject::string("regex")), ("value", DataObject::string(s))])
        }
    }
}

fn name_from_data(v: &DataObject) -> R<NameSelector> {
    Ok(match str_field(v, "kind")? {
        "all" => NameSelector::All,
        "exact" => NameSelector::Exact(str_field(v, "value")?.to_owned()),
        "regex" => NameSelector::Regex(str_field(v, "value")?.to_owned()),
        other => return Err(bad(format!("unknown name selector {other:?}"))),
    })
}

fn snapshot_query_to_data(s: &SnapshotQuery) -> DataObject {
    let mut m = BTreeMap::new();
    let kind = match s.selector {
        SnapshotSelector::Latest => "latest",
        SnapshotSelector::LatestN(n) => {
            m.insert("n".to_owned(), DataObject::Int64(n as i64));
            "latest_n"
        }
        SnapshotSelector::AtTime(t) => {
            m.insert("t".to_owned(), DataObject::Time(t));
            "at"
        }
        SnapshotSelector::BeforeOrAt(t) => {
            m.insert("t".to_owned(), DataObject::Time(t));
            "before_or_at"
        }
        SnapshotSelector::TimeRange(a, b) => {
            m.insert("begin".to_owned(), DataObject::Time(a));
            m.insert("end".to_owned(), DataObject::Time(b));
            "range"
        }
        SnapshotSelector::All => "all",
    };
    m.insert("kind".to_owned(), DataObject::string(kind));
    if let InstanceSelector::Index(i) = s.instances {
        m.insert("instance".to_owned(), DataObject::Int64(i as i64));
    }
    DataObject::Map(m)
}

fn snapshot_query_from_data(v: &DataObject) -> R<SnapshotQuery> {
    let selector = match str_field(v, "kind")? {
        "latest" => SnapshotSelector::Latest,
        "latest_n" => {
            let n = int_field(v, "n")?;
            SnapshotSelector::LatestN(usize::try_from(n).map_err(|_| bad("negative n"))?)
        }
        "at" => SnapshotSelector::AtTime(time_field(v, "t")?),
        "before_or_at" => SnapshotSelector::BeforeOrAt(time_field(v, "t")?),
        "range" => SnapshotSelector::TimeRange(time_field(v, "begin")?, time_field(v, "end")?),
        "all" => SnapshotSelector::All,
        other => return Err(bad(format!("unknown snapshot selector {other:?}"))),
    };
    let instances = match v.get("instance") {
        None => InstanceSelector::All,
        Some(i) => InstanceSelector::Index(
            i.as_i64()
                .and_then(|i| u32::try_from(i).ok())
                .ok_or_else(|| bad("bad instance index"))?,
        ),
    };
    Ok(SnapshotQuery { selector, instances })
}

fn branch<T>(v: &DataObject, key: &str, f: impl Fn(&DataObject) -> R<T>) -> R<Vec<T>> {
    match v.get(key) {
        None => Ok(Vec::new()),
        Some(_) => list_field(v, key)?.iter().map(f).collect(),
    }
}

pub fn query_to_data(q: &Query) -> DataObject {
    let cores = q
        .cores
        .iter()
        .map(|c| {
            let providers = c
                .providers
                .iter()
                .map(|p| {
                    let entities = p
                        .entities
                        .iter()
                        .map(|e| {
                            DataObject::map([
                                ("name", name_to_data(&e.name)),
                                (
                                    "snapshots",
                                    DataObject::List(e.snapshots.iter().map(snapshot_query_to_data).collect()),
                                ),
                            ])
                        })
                        .collect();
                    DataObject::map([
                        ("name", name_to_data(&p.name)),
                        ("entities", DataObject::List(entities)),
                    ])
                })
                .collect();
            DataObject::map([
                ("name", name_to_data(&c.name)),
                ("providers", DataObject::List(providers)),
            ])
        })
        .collect();
    DataObject::map([
        ("cores", DataObject::List(cores)),
        ("with_links", DataObject::Bool(q.with_links)),
    ])
}

pub fn query_from_data(v: &DataObject) -> R<Query> {
    let cores = branch(v, "cores", |c| {
        Ok(CoreQuery {
            name: name_from_data(field(c, "name")?)?,
            providers: branch(c, "providers", |p| {
                Ok(ProviderQuery {
                    name: name_from_data(field(p, "name")?)?,
                    entities: branch(p, "entities", |e| {
                        Ok(EntityQuery {
                            name: name_from_data(field(e, "name")?)?,
                            snapshots: branch(e, "snapshots", snapshot_query_from_data)?,
                        })
                    })?,
                })
            })?,
        })
    })?;
    Ok(Query {
        cores,
        with_links: v.get("with_links").and_then(DataObject::as_bool).unwrap_or(false),
    })
}

/// A resolved query as carried by QUERY_RESULT.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryReply {
    pub result: QueryResult,
    /// Server-side resolution time.
    pub lookup_us: i64,
}

fn snapshot_to_data(id: &MemoryId, s: &EntitySnapshot) -> DataObject {
    let instances = s
        .instances
        .iter()
        .map(|i| {
            DataObject::map([
                ("index", DataObject::Int64(i.index as i64)),
                ("data", i.data.clone()),
                ("metadata", metadata_to_data(&i.metadata)),
            ])
        })
        .collect();
    DataObject::map([
        ("id", DataObject::string(id.to_string())),
        ("tier", DataObject::string(s.tier.name())),
        ("synthetic", DataObject::Bool(s.tier == Tier::Synthetic)),
        ("instances", DataObject::List(instances)),
    ])
}

fn snapshot_from_data(v: &DataObject) -> R<(MemoryId, EntitySnapshot)> {
    let id = id_of(field(v, "id")?)?;
    let timestamp = id.timestamp().ok_or_else(|| bad("snapshot id without timestamp"))?;
    let tier = Tier::from_name(str_field(v, "tier")?).ok_or_else(|| bad("unknown tier"))?;
    let instances = list_field(v, "instances")?
        .iter()
        .map(|i| {
            Ok(EntityInstance {
                index: u32::try_from(int_field(i, "index")?).map_err(|_| bad("bad instance index"))?,
                data: field(i, "data")?.clone(),
                metadata: metadata_from_data(field(i, "metadata")?).map_err(bad)?,
            })
        })
        .collect::<R<_>>()?;
    Ok((
        id,
        EntitySnapshot {
            timestamp,
            instances,
            tier,
        },
    ))
}

impl QueryReply {
    pub fn to_data(&self) -> DataObject {
        let r = &self.result;
        let snapshots = r.snapshots().map(|(id, s)| snapshot_to_data(id, s)).collect();
        let links = r
            .links
            .iter()
            .map(|(id, to)| DataObject::map([("id", DataObject::string(id.to_string())), ("to", ids_to_data(to))]))
            .collect();
        let statuses = r
            .statuses
            .iter()
            .map(|(id, s)| {
                DataObject::map([
                    ("id", DataObject::string(id.to_string())),
                    ("status", DataObject::string(s)),
                ])
            })
            .collect();
        DataObject::map([
            ("memory", DataObject::string(r.memory.name())),
            ("snapshots", DataObject::List(snapshots)),
            ("links", DataObject::List(links)),
            ("statuses", DataObject::List(statuses)),
            ("lookup_us", DataObject::Int64(self.lookup_us)),
        ])
    }

    pub fn from_data(v: &DataObject) -> R<Self> {
        let mut result = QueryResult::empty(str_field(v, "memory")?);
        let mut touched = BTreeSet::new();
        for s in list_field(v, "snapshots")? {
            let (id, snap) = snapshot_from_data(s)?;
            let entity = id
                .entity_prefix()
                .ok_or_else(|| bad("snapshot id below entity level"))?;
            result.memory.insert_snapshot(&entity, snap);
            touched.insert(entity);
            result.ids.push(id);
        }
        for l in list_field(v, "links")? {
            let id = id_of(field(l, "id")?)?;
            let to: BTreeSet<MemoryId> = ids_from(l, "to")?.into_iter().collect();
            result.memory.insert_links(&id, to.iter().cloned());
            result.links.insert(id, to);
        }
        for s in list_field(v, "statuses")? {
            result
                .statuses
                .push((id_of(field(s, "id")?)?, str_field(s, "status")?.to_owned()));
        }
        result.touched = touched.into_iter().collect();
        Ok(QueryReply {
            result,
            lookup_us: int_field(v, "lookup_us")?,
        })
    }
}

// ---- notifications and subscriptions ----

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notification {
    pub seq: u64,
    pub ids: Vec<MemoryId>,
    /// Client-chosen subscription id the notification is delivered for.
    pub sub: u64,
}

impl Notification {
    pub fn to_data(&self) -> DataObject {
        DataObject::map([
            ("seq", DataObject::Int64(self.seq as i64)),
            ("ids", ids_to_data(&self.ids)),
            ("sub", DataObject::Int64(self.sub as i64)),
        ])
    }

    pub fn from_data(v: &DataObject) -> R<Self> {
        Ok(Notification {
            seq: int_field(v, "seq")? as u64,
            ids: ids_from(v, "ids")?,
            sub: v.get("sub").and_then(DataObject::as_i64).unwrap_or(0) as u64,
        })
    }
}

pub fn subscribe_to_data(prefix: &MemoryId, sub: u64) -> DataObject {
    DataObject::map([
        ("prefix", DataObject::string(prefix.to_string())),
        ("sub", DataObject::Int64(sub as i64)),
    ])
}

pub fn subscribe_from_data(v: &DataObject) -> R<(MemoryId, u64)> {
    Ok((id_of(field(v, "prefix")?)?, int_field(v, "sub")? as u64))
}

pub fn error_frame(code: &str, message: &str) -> Frame {
    Frame::new(
        MsgType::Error,
        DataObject::map([
            ("code", DataObject::string(code)),
            ("message", DataObject::string(message)),
        ]),
    )
}

/// Turns an ERROR frame into `NetError::Remote`; other frames pass through.
pub fn check_error(frame: Frame) -> R<Frame> {
    if frame.ty == MsgType::Error {
        return Err(NetError::Remote {
            code: str_field(&frame.payload, "code").unwrap_or("unknown").to_owned(),
            message: str_field(&frame.payload, "message").unwrap_or_default().to_owned(),
        });
    }
    Ok(frame)
}

pub fn expect_type(frame: Frame, ty: MsgType) -> R<Frame> {
    let frame = check_error(frame)?;
    if frame.ty != ty {
        return Err(bad(format!("expected {ty:?}, got {:?}", frame.ty)));
    }
    Ok(frame)
}

/// Hierarchy listing used by the `tree` admin command.
pub fn tree_to_data(memory: &Memory, prefix: &MemoryId) -> DataObject {
    let mut cores = Vec::new();
    for core in memory.core_segments() {
        if prefix.core_segment().is_some_and(|c| c != core.name) {
            continue;
        }
        let mut providers = Vec::new();
        for p in core.providers.values() {
            if prefix.provider_segment().is_some_and(|x| x != p.name) {
                continue;
            }
            let entities: Vec<DataObject> = p
                .entities
                .values()
                .filter(|e| prefix.entity_name().is_none_or(|x| x == e.name))
                .map(|e| {
                    let mut m = BTreeMap::new();
                    m.insert("name".to_owned(), DataObject::string(&e.name));
                    m.insert("snapshots".to_owned(), DataObject::Int64(e.timeline.len() as i64));
                    if let Some(t) = e.latest_time() {
                        m.insert("latest".to_owned(), DataObject::Time(t));
                    }
                    DataObject::Map(m)
                })
                .collect();
            providers.push(DataObject::map([
                ("name", DataObject::string(&p.name)),
                ("entities", DataObject::List(entities)),
            ]));
        }
        cores.push(DataObject::map([
            ("name", DataObject::string(&core.name)),
            ("providers", DataObject::List(providers)),
        ]));
    }
    DataObject::map([
        ("memory", DataObject::string(memory.name())),
        ("cores", DataObject::List(cores)),
    ])
}
