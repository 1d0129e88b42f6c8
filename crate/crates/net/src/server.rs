//! The memory server: one named memory (WM + LTM) behind the MEM1 protocol.

use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};
use epimem_core::error::LtmError;
use epimem_core::idf::{parse_schema, TypeObject};
use epimem_core::ltm::{EncodeReport, FilterPolicy, ForgetFilter, LtmOptions, LtmStore};
use epimem_core::model::{future_requests, resolve_query_with, EntitySnapshot, InstanceSelector, QueryResult, Tier};
use epimem_core::predict::{predict, PredictConfig, PredictionRequest, Source};
use epimem_core::{DataObject, Memory, MemoryId, Time};
use parking_lot::Mutex;

use crate::acceptor::Acceptor;
use crate::capacity::{enforce_capacity, CapacityPolicy, ConsolidationSink, EnforceReport};
use crate::config::ServerConfig;
use crate::error::NetError;
use crate::frame::{read_frame, write_frame, Frame, MsgType};
use crate::mns::Heartbeat;
use crate::protocol::{
    commit_from_data, error_frame, int_field, query_from_data, str_field, subscribe_from_data, tree_to_data,
    CommitReply, Notification, QueryReply, RemoteError,
};

type Writer = Arc<Mutex<BufWriter<TcpStream>>>;

/// One subscriber's bounded notification queue.
pub struct SubscriptionQueue {
    tx: Sender<Notification>,
    dropped: AtomicU64,
    enqueued: AtomicU64,
}

impl SubscriptionQueue {
    pub fn new(capacity: usize) -> (Self, Receiver<Notification>) {
        let (tx, rx) = bounded(capacity);
        (
            SubscriptionQueue {
                tx,
                dropped: AtomicU64::new(0),
                enqueued: AtomicU64::new(0),
            },
            rx,
        )
    }

    /// Enqueues without blocking; a full queue drops and counts the notification.
    pub fn offer(&self, n: Notification) -> bool {
        match self.tx.try_send(n) {
            Ok(()) => {
                self.enqueued.fetch_add(1, Ordering::Relaxed);
                true
            }
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                self.dropped.fetch_add(1, Ordering::Relaxed);
                false
            }
        }
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn enqueued(&self) -> u64 {
        self.enqueued.load(Ordering::Relaxed)
    }
}

struct Subscription {
    conn: u64,
    sub: u64,
    prefix: MemoryId,
    queue: SubscriptionQueue,
}

/// Counters reported by the `stats` admin command.
#[derive(Debug, Default)]
pub struct ServerCounters {
    pub commits: AtomicU64,
    pub queries: AtomicU64,
    pub consolidated: AtomicU64,
    /// LTM write failures during capacity enforcement.
    pub alarms: AtomicU64,
    pub dropped_notifications: AtomicU64,
}

struct Shared {
    cfg: ServerConfig,
    memory: Mutex<Memory>,
    ltm: LtmStore,
    policy: Mutex<CapacityPolicy>,
    predict: PredictConfig,
    subs: Mutex<Vec<Arc<Subscription>>>,
    counters: ServerCounters,
    next_conn: AtomicU64,
}

struct LtmSink<'a>(&'a LtmStore);

impl ConsolidationSink for LtmSink<'_> {
    fn consolidate(
        &self,
        id: &MemoryId,
        snapshot: &EntitySnapshot,
        ty: Option<&TypeObject>,
        links: &[MemoryId],
        now: Time,
    ) -> Result<(), String> {
        self.0
            .consolidate(id, snapshot, ty, links, now)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
}

pub struct MemoryServer {
    shared: Arc<Shared>,
    acceptor: Acceptor,
    heartbeat: Option<Heartbeat>,
    stop: Arc<AtomicBool>,
    maintenance: Option<JoinHandle<()>>,
}

impl MemoryServer {
    pub fn start(cfg: ServerConfig) -> Result<Self, NetError> {
        cfg.validate()?;
        let mut memory = Memory::new(cfg.memory_name.clone());
        let schema = match &cfg.schema {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| NetError::Config(format!("{}: {e}", path.display())))?;
                Some(parse_schema(&text).map_err(|e| NetError::Config(e.to_string()))?)
            }
            None => None,
        };
        for decl in cfg.cores() {
            let ty =
                match &decl.type_name {
                    Some(t) => Some(schema.as_ref().and_then(|s| s.get(t)).cloned().ok_or_else(|| {
                        NetError::Config(format!("core segment {} names unknown type {t}", decl.name))
                    })?),
                    None => None,
                };
            memory.declare_core_segment(decl.name, ty);
        }
        let opts = LtmOptions {
            sync: cfg.ltm_sync,
            filter: FilterPolicy::new(cfg.ltm_max_hz.unwrap_or(f64::INFINITY), cfg.ltm_similarity_epsilon),
            ..Default::default()
        };
        let ltm = LtmStore::open(&cfg.ltm_root, &cfg.memory_name, opts).map_err(ltm_err)?;
        restore_latest(&mut memory, &ltm)?;

        let policy = CapacityPolicy {
            max_bytes: cfg.wm_max_bytes,
            max_snapshots_per_entity: cfg.wm_max_snapshots_per_entity,
            hot_queries: cfg.hot_queries,
            hot_window_us: (cfg.hot_window_s * 1e6) as i64,
        };
        let shared = Arc::new(Shared {
            cfg: cfg.clone(),
            memory: Mutex::new(memory),
            ltm,
            policy: Mutex::new(policy),
            predict: PredictConfig::default(),
            subs: Mutex::default(),
            counters: ServerCounters::default(),
            next_conn: AtomicU64::new(1),
        });
        let handler_state = shared.clone();
        let acceptor = Acceptor::bind(
            &cfg.listen,
            &cfg.memory_name,
            Arc::new(move |s| serve_connection(s, &handler_state)),
        )?;
        let endpoint = acceptor.local_addr().to_string();
        tracing::info!("memory {} listening on {endpoint}", cfg.memory_name);
        let heartbeat = match &cfg.mns {
            Some(mns) => {
                crate::mns::mns_register(mns, &cfg.memory_name, &endpoint)?;
                Some(Heartbeat::start(
                    mns.clone(),
                    cfg.memory_name.clone(),
                    endpoint,
                    Duration::from_secs_f64(cfg.heartbeat_s),
                ))
            }
            None => None,
        };
        let stop = Arc::new(AtomicBool::new(false));
        let maintenance = {
            let shared = shared.clone();
            let stop = stop.clone();
            thread::spawn(move || {
                let mut since = Duration::ZERO;
                while !stop.load(Ordering::SeqCst) {
                    thread::sleep(Duration::from_millis(50));
                    since += Duration::from_millis(50);
                    if since >= Duration::from_secs(1) {
                        since = Duration::ZERO;
                        let mut mem = shared.memory.lock();
                        run_capacity(&shared, &mut mem);
                    }
                }
            })
        };
        Ok(MemoryServer {
            shared,
            acceptor,
            heartbeat,
            stop,
            maintenance: Some(maintenance),
        })
    }

    pub fn endpoint(&self) -> String {
        self.acceptor.local_addr().to_string()
    }

    pub fn memory_name(&self) -> &str {
        &self.shared.cfg.memory_name
    }

    /// Runs `f` on the working memory under the server lock.
    pub fn with_memory<T>(&self, f: impl FnOnce(&mut Memory) -> T) -> T {
        f(&mut self.shared.memory.lock())
    }

    pub fn ltm(&self) -> &LtmStore {
        &self.shared.ltm
    }

    pub fn counters(&self) -> &ServerCounters {
        &self.shared.counters
    }

    pub fn stats(&self) -> DataObject {
        stats(&self.shared)
    }

    /// Number of live subscriptions across all connections.
    pub fn subscription_count(&self) -> usize {
        self.shared.subs.lock().len()
    }

    pub fn shutdown(&mut self) {
        self.heartbeat.take();
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.maintenance.take() {
            let _ = t.join();
        }
        self.acceptor.shutdown();
        self.shared.subs.lock().clear();
        if let Err(e) = self.shared.ltm.flush() {
            tracing::warn!("ltm flush on shutdown failed: {e}");
        }
    }
}

impl Drop for MemoryServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn ltm_err(e: LtmError) -> NetError {
    NetError::Remote {
        code: "ltm".into(),
        message: e.to_string(),
    }
}

/// Makes entities that only live in LTM visible to queries again by restoring
/// their newest snapshot into WM.
fn restore_latest(memory: &mut Memory, ltm: &LtmStore) -> Result<(), NetError> {
    for entity in ltm.entities() {
        if memory.entity(&entity).is_some_and(|e| !e.timeline.is_empty()) {
            continue;
        }
        let Some(last) = ltm.list_ids(&entity, None).pop() else {
            continue;
        };
        let mut snapshot = ltm.recall(&last).map_err(ltm_err)?;
        snapshot.tier = Tier::Wm;
        let links = ltm.sidecar(&last).map(|s| s.links).unwrap_or_default();
        memory.insert_snapshot(&entity, snapshot);
        if !links.is_empty() {
            memory.insert_links(&last, links);
        }
    }
    Ok(())
}

fn run_capacity(shared: &Shared, mem: &mut Memory) -> EnforceReport {
    let policy = *shared.policy.lock();
    let report = enforce_capacity(mem, &policy, &LtmSink(&shared.ltm), Time::now());
    shared
        .counters
        .consolidated
        .fetch_add(report.consolidated.len() as u64, Ordering::Relaxed);
    shared
        .counters
        .alarms
        .fetch_add(report.failed.len() as u64, Ordering::Relaxed);
    report
}

fn serve_connection(stream: TcpStream, shared: &Arc<Shared>) {
    let conn = shared.next_conn.fetch_add(1, Ordering::Relaxed);
    let Ok(write_half) = stream.try_clone() else { return };
    let writer: Writer = Arc::new(Mutex::new(BufWriter::new(write_half)));
    let mut reader = BufReader::new(stream);
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(NetError::Decode(e)) => {
                // Well-framed but undecodable payload: report and keep the connection.
                if write_frame(&mut *writer.lock(), &error_frame("malformed-input", &e.to_string())).is_err() {
                    break;
                }
                continue;
            }
            Err(e) => {
                tracing::debug!("connection {conn} closed: {e}");
                break;
            }
        };
        let reply = handle(shared, conn, &writer, frame).unwrap_or_else(|e| error_frame(e.code(), &e.to_string()));
        if write_frame(&mut *writer.lock(), &reply).is_err() {
            break;
        }
    }
    shared.subs.lock().retain(|s| s.conn != conn);
}

fn handle(shared: &Arc<Shared>, conn: u64, writer: &Writer, frame: Frame) -> Result<Frame, NetError> {
    let p = &frame.payload;
    match frame.ty {
        MsgType::Commit => handle_commit(shared, p),
        MsgType::Query => handle_query(shared, p),
        MsgType::Subscribe => {
            let (prefix, sub) = subscribe_from_data(p)?;
            let (queue, rx) = SubscriptionQueue::new(shared.cfg.subscriber_queue);
            let s = Arc::new(Subscription {
                conn,
                sub,
                prefix,
                queue,
            });
            spawn_sender(rx, writer.clone());
            let mut subs = shared.subs.lock();
            subs.retain(|x| !(x.conn == conn && x.sub == sub));
            subs.push(s);
            Ok(Frame::new(MsgType::Subscribe, p.clone()))
        }
        MsgType::Unsubscribe => {
            let sub = int_field(p, "sub")? as u64;
            shared.subs.lock().retain(|x| !(x.conn == conn && x.sub == sub));
            Ok(Frame::new(MsgType::Unsubscribe, p.clone()))
        }
        MsgType::Admin => handle_admin(shared, p),
        other => Err(NetError::Protocol(format!("memory server does not handle {other:?}"))),
    }
}

fn spawn_sender(rx: Receiver<Notification>, writer: Writer) {
    thread::spawn(move || {
        for n in rx {
            let frame = Frame::new(MsgType::Notify, n.to_data());
            if write_frame(&mut *writer.lock(), &frame).is_err() {
                break;
            }
        }
    });
}

fn handle_commit(shared: &Shared, p: &DataObject) -> Result<Frame, NetError> {
    let commit = commit_from_data(p)?;
    let start = Instant::now();
    let mut mem = shared.memory.lock();
    let outcome = mem.apply_commit(&commit, Time::now());
    run_capacity(shared, &mut mem);
    let storage_us = start.elapsed().as_micros() as i64;
    let n = &outcome.notification;
    if !n.ids.is_empty() {
        for s in shared.subs.lock().iter() {
            if n.ids.iter().any(|id| s.prefix.is_prefix_of(id)) {
                let delivered = s.queue.offer(Notification {
                    seq: n.seq,
                    ids: n.ids.clone(),
                    sub: s.sub,
                });
                if !delivered {
                    shared.counters.dropped_notifications.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
    }
    drop(mem);
    shared.counters.commits.fetch_add(1, Ordering::Relaxed);
    let reply = CommitReply {
        seq: n.seq,
        statuses: outcome
            .statuses
            .into_iter()
            .map(|s| {
                s.map_err(|e| RemoteError {
                    code: e.code().to_owned(),
                    message: e.to_string(),
                })
            })
            .collect(),
        storage_us,
    };
    Ok(Frame::new(MsgType::CommitStatus, reply.to_data()))
}

fn handle_query(shared: &Shared, p: &DataObject) -> Result<Frame, NetError> {
    let q = query_from_data(p)?;
    let start = Instant::now();
    let mut mem = shared.memory.lock();
    let mut result = resolve_query_with(&mem, &q, Some(&shared.ltm))?;
    for (entity, at, instances) in future_requests(&mem, &q, Some(&shared.ltm))? {
        add_prediction(shared, &mem, &mut result, entity, at, instances);
    }
    result.ids.sort();
    result.touched.sort();
    result.touched.dedup();
    mem.record_access(&result.touched, Time::now());
    drop(mem);
    let lookup_us = start.elapsed().as_micros() as i64;
    shared.counters.queries.fetch_add(1, Ordering::Relaxed);
    Ok(Frame::new(
        MsgType::QueryResult,
        QueryReply { result, lookup_us }.to_data(),
    ))
}

fn add_prediction(
    shared: &Shared,
    mem: &Memory,
    result: &mut QueryResult,
    entity: MemoryId,
    at: Time,
    instances: InstanceSelector,
) {
    let sid = entity.snapshot(at);
    if result.ids.contains(&sid) {
        return;
    }
    let model = shared.ltm.latent_model(&entity);
    let req = PredictionRequest {
        entity: entity.clone(),
        at,
        source: Source::Auto,
    };
    match predict(mem, model.as_deref(), &req, &shared.predict) {
        Ok(mut r) => {
            if let InstanceSelector::Index(i) = instances {
                r.snapshot.instances.retain(|x| x.index == i);
                if r.snapshot.instances.is_empty() {
                    return;
                }
            }
            result.memory.insert_snapshot(&entity, r.snapshot);
            result.ids.push(sid);
            result.touched.push(entity);
        }
        Err(e) => result.statuses.push((sid, e.code().to_owned())),
    }
}

fn stats(shared: &Shared) -> DataObject {
    let (entities, snapshots, wm_bytes) = {
        let m = shared.memory.lock();
        (m.entities().count(), m.snapshot_count(), m.payload_bytes())
    };
    let l = shared.ltm.stats();
    let c = &shared.counters;
    let n = |v: u64| DataObject::Int64(v as i64);
    let policy = *shared.policy.lock();
    DataObject::map([
        ("memory", DataObject::string(&shared.cfg.memory_name)),
        ("entities", n(entities as u64)),
        ("snapshots", n(snapshots as u64)),
        ("wm_bytes", n(wm_bytes as u64)),
        ("wm_max_bytes", n(policy.max_bytes)),
        ("ltm_records", n(l.records as u64)),
        ("ltm_online", n(l.online_records as u64)),
        ("ltm_latent", n(l.latent_records as u64)),
        ("ltm_original_bytes", n(l.original_bytes)),
        ("ltm_stored_bytes", n(l.stored_bytes)),
        ("models", n(l.models as u64)),
        ("stale_models", n(l.stale_models as u64)),
        ("commits", n(c.commits.load(Ordering::Relaxed))),
        ("queries", n(c.queries.load(Ordering::Relaxed))),
        ("consolidated", n(c.consolidated.load(Ordering::Relaxed))),
        ("alarms", n(c.alarms.load(Ordering::Relaxed))),
        (
            "dropped_notifications",
            n(c.dropped_notifications.load(Ordering::Relaxed)),
        ),
        ("subscriptions", n(shared.subs.lock().len() as u64)),
    ])
}

fn report_to_data(r: &EncodeReport) -> DataObject {
    let n = |v: u64| DataObject::Int64(v as i64);
    DataObject::map([
        ("entity", DataObject::string(r.entity.to_string())),
        ("encoded", n(r.encoded as u64)),
        ("skipped", n(r.skipped as u64)),
        ("d", n(r.d as u64)),
        ("k", n(r.k as u64)),
        ("zero_variance", DataObject::Bool(r.zero_variance)),
        ("has_dynamics", DataObject::Bool(r.has_dynamics)),
        ("original_bytes", n(r.original_bytes)),
        ("stored_bytes_before", n(r.stored_bytes_before)),
        ("stored_bytes_after", n(r.stored_bytes_after)),
        ("model_bytes", n(r.model_bytes)),
    ])
}

fn id_arg(p: &DataObject, key: &str) -> Result<MemoryId, NetError> {
    Ok(MemoryId::parse(str_field(p, key)?)?)
}

fn time_arg(p: &DataObject, key: &str) -> Option<Time> {
    match p.get(key)? {
        DataObject::Time(t) => Some(*t),
        DataObject::Int64(t) => Some(Time(*t)),
        DataObject::String(s) => Time::parse(s),
        _ => None,
    }
}

fn handle_admin(shared: &Shared, p: &DataObject) -> Result<Frame, NetError> {
    let reply = match str_field(p, "command")? {
        "stats" => stats(shared),
        "resize" => {
            let bytes = int_field(p, "bytes")?;
            if bytes <= 0 {
                return Err(NetError::Protocol("resize needs bytes > 0".into()));
            }
            shared.policy.lock().max_bytes = bytes as u64;
            let report = run_capacity(shared, &mut shared.memory.lock());
            DataObject::map([
                ("wm_max_bytes", DataObject::Int64(bytes)),
                ("consolidated", DataObject::Int64(report.consolidated.len() as i64)),
                ("failed", DataObject::Int64(report.failed.len() as i64)),
            ])
        }
        "consolidate" => {
            let mut mem = shared.memory.lock();
            let report = match p.get("prefix") {
                // Operator-forced: every non-latest snapshot under the prefix.
                Some(_) => force_consolidate(shared, &mut mem, &id_arg(p, "prefix")?),
                None => run_capacity(shared, &mut mem),
            };
            DataObject::map([
                (
                    "consolidated",
                    DataObject::List(
                        report
                            .consolidated
                            .iter()
                            .map(|i| DataObject::string(i.to_string()))
                            .collect(),
                    ),
                ),
                ("failed", DataObject::Int64(report.failed.len() as i64)),
            ])
        }
        "encode_offline" => {
            let entity = id_arg(p, "entity")?;
            let report = shared.ltm.encode_offline(&entity).map_err(ltm_err)?;
            report_to_data(&report)
        }
        "forget" => {
            let filter = ForgetFilter {
                prefix: id_arg(p, "prefix")?,
                range: match (time_arg(p, "begin"), time_arg(p, "end")) {
                    (Some(a), Some(b)) => Some((a, b)),
                    _ => None,
                },
                provider: p.get("provider").and_then(DataObject::as_str).map(str::to_owned),
            };
            let removed = shared.ltm.forget(&filter).map_err(ltm_err)?;
            DataObject::map([("removed", DataObject::Int64(removed as i64))])
        }
        "tree" => {
            let prefix = match p.get("prefix") {
                Some(_) => id_arg(p, "prefix")?,
                None => MemoryId::memory(shared.cfg.memory_name.clone())?,
            };
            let mem = shared.memory.lock();
            let mut tree = tree_to_data(&mem, &prefix);
            if let DataObject::Map(m) = &mut tree {
                let ltm_ids = shared.ltm.list_ids(&prefix, None);
                m.insert("ltm_records".into(), DataObject::Int64(ltm_ids.len() as i64));
            }
            tree
        }
        "flush" => {
            shared.ltm.flush().map_err(ltm_err)?;
            DataObject::map([("ok", DataObject::Bool(true))])
        }
        other => return Err(NetError::Protocol(format!("unknown admin command {other:?}"))),
    };
    Ok(Frame::new(MsgType::Admin, reply))
}

fn force_consolidate(shared: &Shared, mem: &mut Memory, prefix: &MemoryId) -> EnforceReport {
    let ids: Vec<MemoryId> = mem
        .entities()
        .filter(|(id, _)| prefix.is_prefix_of(id) || id.is_prefix_of(prefix))
        .flat_map(|(id, e)| {
            let n = e.timeline.len();
            e.timeline
                .keys()
                .take(n.saturating_sub(1))
                .map(|t| id.snapshot(*t))
                .filter(|sid| prefix.is_prefix_of(sid) || prefix == sid)
                .collect::<Vec<_>>()
        })
        .collect();
    let mut report = EnforceReport::default();
    let sink = LtmSink(&shared.ltm);
    let now = Time::now();
    for sid in ids {
        let entity = sid.entity_prefix().expect("snapshot id");
        let links: Vec<MemoryId> = mem
            .entity(&entity)
            .map(|e| e.links_for(&sid).into_iter().collect())
            .unwrap_or_default();
        let ty = mem.core_segment(sid.core_segment().unwrap_or_default()).and_then(|c| {
            c.providers
                .get(sid.provider_segment().unwrap_or_default())
                .and_then(|p| p.ty.clone())
                .or(c.ty.clone())
        });
        let Some(snapshot) = mem.snapshot(&sid) else { continue };
        match sink.consolidate(&sid, snapshot, ty.as_ref(), &links, now) {
            Ok(()) => {
                mem.remove_snapshot(&sid);
                report.consolidated.push(sid);
            }
            Err(e) => report.failed.push((sid, e)),
        }
    }
    shared
        .counters
        .consolidated
        .fetch_add(report.consolidated.len() as u64, Ordering::Relaxed);
    shared
        .counters
        .alarms
        .fetch_add(report.failed.len() as u64, Ordering::Relaxed);
    report
}
