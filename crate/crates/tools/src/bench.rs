//! Commit, query and data-age benchmarks with per-phase timing statistics.

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded};
use epimem_core::model::{Commit, EntityUpdate, Query};
use epimem_core::{DataObject, MemoryId, Time};
use epimem_net::frame::{write_frame, Frame, MsgType};
use epimem_net::protocol::{commit_from_data, commit_to_data};
use epimem_net::{Connection, MemoryServer, NetError, ServerConfig};
use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::payload::{BusinessObject, PayloadKind};
use crate::transport::{broker_subscribe, connect, Broker, P2pReceiver};

pub const BATCHES: [usize; 4] = [1, 20, 50, 100];
pub const DEFAULT_SAMPLES: usize = 1000;
pub const PREPOPULATED: usize = 1000;
const BENCH_MEMORY: &str = "Bench";
const BENCH_CORE: &str = "Data";

#[derive(Debug, Clone)]
pub struct PhaseStats {
    pub name: &'static str,
    /// Per-sample durations in microseconds.
    pub samples: Vec<f64>,
}

impl PhaseStats {
    fn new(name: &'static str) -> Self {
        PhaseStats {
            name,
            samples: Vec::new(),
        }
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            return f64::NAN;
        }
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / self.samples.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub scenario: String,
    pub payload: String,
    pub batch: usize,
    pub samples: usize,
    pub phases: Vec<PhaseStats>,
    pub errors: u64,
    pub drops: u64,
    /// False when the scenario was aborted.
    pub valid: bool,
}

impl BenchResult {
    pub fn phase(&self, name: &str) -> &PhaseStats {
        self.phases
            .iter()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("no phase {name} in {} result", self.scenario))
    }

    pub fn rows(&self) -> Vec<CsvRow> {
        self.phases
            .iter()
            .map(|p| CsvRow {
                scenario: self.scenario.clone(),
                payload: self.payload.clone(),
                batch: self.batch,
                samples: p.samples.len(),
                phase: p.name.to_owned(),
                mean_us: p.mean(),
                var_us: p.variance(),
                errors: self.errors,
                drops: self.drops,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CsvRow {
    pub scenario: String,
    pub payload: String,
    pub batch: usize,
    pub samples: usize,
    pub phase: String,
    pub mean_us: f64,
    pub var_us: f64,
    pub errors: u64,
    pub drops: u64,
}

pub fn write_csv<W: Write>(out: W, rows: &[CsvRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn us(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

fn bench_config(root: &std::path::Path) -> ServerConfig {
    ServerConfig {
        memory_name: BENCH_MEMORY.into(),
        core_segments: vec![BENCH_CORE.into()],
        ltm_root: root.to_path_buf(),
        ltm_sync: false,
        wm_max_bytes: 4 << 30,
        ..Default::default()
    }
}

/// An in-process memory server pre-populated with [`PREPOPULATED`] entries.
pub struct BenchServer {
    pub server: MemoryServer,
    _dir: tempfile::TempDir,
}

impl BenchServer {
    pub fn start() -> Result<Self, NetError> {
        let dir = tempfile::tempdir()?;
        let server = MemoryServer::start(bench_config(dir.path()))?;
        let conn = Connection::open(&server.endpoint())?;
        prepopulate(&conn)?;
        Ok(BenchServer { server, _dir: dir })
    }

    pub fn connect(&self) -> Result<Arc<Connection>, NetError> {
        Connection::open(&self.server.endpoint())
    }
}

fn entity(group: &str, j: usize) -> MemoryId {
    MemoryId::entity_id(BENCH_MEMORY, BENCH_CORE, group, &format!("e{j}")).expect("valid bench id")
}

fn prepopulate(conn: &Connection) -> Result<(), NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let updates = (0..PREPOPULATED)
        .map(|j| {
            EntityUpdate::new(
                entity("pre", j),
                Time(1),
                vec![PayloadKind::Simple.generate(&mut rng).to_data()],
            )
        })
        .collect();
    check_commit(conn.commit(&Commit::new(updates))?)
}

fn check_commit(reply: epimem_net::protocol::CommitReply) -> Result<(), NetError> {
    match reply.statuses.into_iter().find_map(Result::err) {
        Some(e) => Err(NetError::Remote {
            code: e.code,
            message: e.message,
        }),
        None => Ok(()),
    }
}

/// Commits `samples` batches of `batch` objects; phases: convert, full, storage, transfer.
pub fn run_commit_bench(conn: &Connection, kind: PayloadKind, batch: usize, samples: usize, seed: u64) -> BenchResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group = format!("commit-{kind}-{batch}");
    let (mut convert, mut full, mut storage, mut transfer) = (
        PhaseStats::new("convert"),
        PhaseStats::new("full"),
        PhaseStats::new("storage"),
        PhaseStats::new("transfer"),
    );
    let mut result = BenchResult {
        scenario: "commit".into(),
        payload: kind.name().into(),
        batch,
        samples,
        phases: Vec::new(),
        errors: 0,
        drops: 0,
        valid: true,
    };
    for s in 0..samples {
        let objects: Vec<BusinessObject> = (0..batch).map(|_| kind.generate(&mut rng)).collect();
        let start = Instant::now();
        let data: Vec<DataObject> = objects.iter().map(BusinessObject::to_data).collect();
        convert.samples.push(us(start.elapsed()));
        // Timestamps cycle so long runs overwrite instead of growing the store.
        let t = Time(2 + (s % 8) as i64);
        let commit = Commit::new(
            data.into_iter()
                .enumerate()
                .map(|(j, d)| EntityUpdate::new(entity(&group, j), t, vec![d]))
                .collect(),
        );
        let start = Instant::now();
        let reply = conn.commit(&commit);
        let elapsed = us(start.elapsed());
        match reply.and_then(|r| {
            let st = r.storage_us as f64;
            check_commit(r).map(|_| st)
        }) {
            Ok(st) => {
                full.samples.push(elapsed);
                storage.samples.push(st);
                transfer.samples.push(elapsed - st);
            }
            Err(e) => {
                tracing::error!("commit bench aborted: {e}");
                result.errors += 1;
                result.valid = false;
                break;
            }
        }
    }
    result.phases = vec![convert, full, storage, transfer];
    result
}

/// Queries the same `batch` snapshots `samples` times; phases: full, lookup, transfer, convert.
pub fn run_query_bench(conn: &Connection, kind: PayloadKind, batch: usize, samples: usize, seed: u64) -> BenchResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group = format!("query-{kind}-{batch}");
    let objects: Vec<BusinessObject> = (0..batch).map(|_| kind.generate(&mut rng)).collect();
    let ids: Vec<MemoryId> = (0..batch).map(|j| entity(&group, j).snapshot(Time(1))).collect();
    let mut result = BenchResult {
        scenario: "query".into(),
        payload: kind.name().into(),
        batch,
        samples,
        phases: Vec::new(),
        errors: 0,
        drops: 0,
        valid: true,
    };
    let commit = Commit::new(
        objects
            .iter()
            .enumerate()
            .map(|(j, o)| EntityUpdate::new(entity(&group, j), Time(1), vec![o.to_data()]))
            .collect(),
    );
    if conn.commit(&commit).and_then(check_commit).is_err() {
        result.errors += 1;
        result.valid = false;
        return result;
    }
    let q = Query::snapshots(&ids);
    let (mut full, mut lookup, mut transfer, mut convert) = (
        PhaseStats::new("full"),
        PhaseStats::new("lookup"),
        PhaseStats::new("transfer"),
        PhaseStats::new("convert"),
    );
    for _ in 0..samples {
        let start = Instant::now();
        let reply = match conn.query(&q) {
            Ok(r) => r,
            Err(e) => {
                tracing::error!("query bench aborted: {e}");
                result.errors += 1;
                result.valid = false;
                break;
            }
        };
        let elapsed = us(start.elapsed());
        let lk = reply.lookup_us as f64;
        full.samples.push(elapsed);
        lookup.samples.push(lk);
        transfer.samples.push(elapsed - lk);
        let start = Instant::now();
        let back: Vec<Option<BusinessObject>> = ids
            .iter()
            .map(|id| {
                let s = reply.result.snapshot(id)?;
                BusinessObject::from_data(kind, &s.instances.first()?.data)
            })
            .collect();
        convert.samples.push(us(start.elapsed()));
        let ok = back.iter().zip(&objects).all(|(b, o)| b.as_ref() == Some(o));
        if !ok {
            result.errors += 1;
        }
    }
    result.phases = vec![full, lookup, transfer, convert];
    result
}

/// Age of a received snapshot: now minus its production time.
fn age_us(produced: Time) -> f64 {
    (Time::now().0 - produced.0) as f64
}

fn age_result(transport: &str, kind: PayloadKind, samples: usize, ages: Vec<f64>, drops: u64) -> BenchResult {
    BenchResult {
        scenario: "age-compare".into(),
        payload: format!("{kind}/{transport}"),
        batch: 1,
        samples,
        phases: vec![PhaseStats {
            name: "age",
            samples: ages,
        }],
        errors: 0,
        drops,
        valid: true,
    }
}

const AGE_TIMEOUT: Duration = Duration::from_secs(5);

/// Runs `samples` one-at-a-time transfers; `send` publishes an update and the
/// consumer reports its observed age on the channel.
fn age_loop(
    kind: PayloadKind,
    samples: usize,
    seed: u64,
    rx: &crossbeam_channel::Receiver<f64>,
    mut send: impl FnMut(EntityUpdate) -> Result<(), NetError>,
) -> Result<(Vec<f64>, u64), NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = entity("age", 0);
    let mut ages = Vec::with_capacity(samples);
    let mut drops = 0;
    let mut last = Time(0);
    for _ in 0..samples {
        let object = kind.generate(&mut rng);
        let mut t = Time::now();
        if t <= last {
            t = Time(last.0 + 1);
        }
        last = t;
        send(EntityUpdate::new(e.clone(), t, vec![object.to_data()]).produced_at(t))?;
        match rx.recv_timeout(AGE_TIMEOUT) {
            Ok(a) => ages.push(a),
            Err(_) => drops += 1,
        }
    }
    Ok((ages, drops))
}

fn produced_at(commit: &Commit) -> Option<Time> {
    commit.updates.first()?.produced_at
}

/// Data age through the memory: producer commits, a subscribed consumer
/// queries the notified snapshot.
pub fn age_memory(kind: PayloadKind, samples: usize, seed: u64) -> Result<BenchResult, NetError> {
    let bench = BenchServer::start()?;
    let consumer = bench.connect()?;
    let (tx, rx) = unbounded();
    let q_conn = consumer.clone();
    let _sub = consumer.subscribe(&entity("age", 0), move |n| {
        let Ok(reply) = q_conn.query(&Query::snapshots(&n.ids)) else {
            return;
        };
        for (_, s) in reply.result.snapshots() {
            if let Some(p) = s.instances.first().and_then(|i| i.metadata.produced_at) {
                let _ = tx.send(age_us(p));
            }
        }
    })?;
    let producer = bench.connect()?;
    let (ages, drops) = age_loop(kind, samples, seed, &rx, |u| {
        producer.commit(&Commit::single(u)).and_then(check_commit)
    })?;
    Ok(age_result("memory", kind, samples, ages, drops))
}

/// Data age over a direct producer-to-consumer connection.
pub fn age_p2p(kind: PayloadKind, samples: usize, seed: u64) -> Result<BenchResult, NetError> {
    let receiver = P2pReceiver::bind()?;
    let endpoint = receiver.endpoint();
    let (tx, rx) = unbounded();
    let handle = receiver.serve_one(move |f| {
        if let Some(p) = commit_from_data(&f.payload).ok().as_ref().and_then(produced_at) {
            let _ = tx.send(age_us(p));
        }
    });
    let mut stream = connect(&endpoint)?;
    let (ages, drops) = age_loop(kind, samples, seed, &rx, |u| {
        Ok(write_frame(
            &mut stream,
            &Frame::new(MsgType::Commit, commit_to_data(&Commit::single(u))),
        )?)
    })?;
    drop(stream);
    let _ = handle.join();
    Ok(age_result("p2p", kind, samples, ages, drops))
}

/// Data age through a single-hop broker.
pub fn age_ps(kind: PayloadKind, samples: usize, seed: u64) -> Result<BenchResult, NetError> {
    let broker = Broker::start()?;
    let (tx, rx) = unbounded();
    let _consumer = broker_subscribe(&broker.endpoint(), move |f| {
        if let Some(p) = commit_from_data(&f.payload).ok().as_ref().and_then(produced_at) {
            let _ = tx.send(age_us(p));
        }
    })?;
    let mut stream = connect(&broker.endpoint())?;
    let (ages, drops) = age_loop(kind, samples, seed, &rx, |u| {
        Ok(write_frame(
            &mut stream,
            &Frame::new(MsgType::Commit, commit_to_data(&Commit::single(u))),
        )?)
    })?;
    Ok(age_result("ps", kind, samples, ages, drops))
}

/// Memory, P2P and broker data age for one payload kind, in that order.
pub fn run_age_compare(kind: PayloadKind, samples: usize, seed: u64) -> Result<[BenchResult; 3], NetError> {
    Ok([
        age_memory(kind, samples, seed)?,
        age_p2p(kind, samples, seed)?,
        age_ps(kind, samples, seed)?,
    ])
}

/// Age of an empty control frame over P2P, measured on the monotonic clock.
pub fn control_frame_age() -> Result<Duration, NetError> {
    let receiver = P2pReceiver::bind()?;
    let endpoint = receiver.endpoint();
    let sent: Arc<Mutex<Option<Instant>>> = Arc::default();
    let (tx, rx) = bounded(1);
    let mark = sent.clone();
    let handle = receiver.serve_one(move |_| {
        let start = mark.lock().expect("send time recorded before the write");
        let _ = tx.send(start.elapsed());
    });
    let mut stream = connect(&endpoint)?;
    *sent.lock() = Some(Instant::now());
    write_frame(&mut stream, &Frame::new(MsgType::Notify, DataObject::map::<&str>([])))?;
    let age = rx
        .recv_timeout(AGE_TIMEOUT)
        .map_err(|_| NetError::Protocol("control frame not received".into()))?;
    drop(stream);
    let _ = handle.join();
    Ok(age)
}
