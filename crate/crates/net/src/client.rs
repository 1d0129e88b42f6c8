//! Client library: name resolution, connection caching, retries and
//! subscription dispatch.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender, TrySendError};
use epimem_core::model::{Commit, Query};
use epimem_core::{DataObject, MemoryId};
use parking_lot::Mutex;

use crate::error::NetError;
use crate::frame::{read_frame, write_frame, Frame, MsgType};
use crate::mns::mns_resolve;
use crate::protocol::{
    commit_to_data, expect_type, query_to_data, subscribe_to_data, CommitReply, Notification, QueryReply,
};

/// Exponential backoff for connection attempts.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub base: Duration,
    pub cap: Duration,
    pub max_retries: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base: Duration::from_millis(100),
            cap: Duration::from_secs(5),
            max_retries: 5,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base.saturating_mul(1u32 << attempt.min(20)).min(self.cap)
    }

    /// Runs `f` until it succeeds, fails with a non-retriable error or retries run out.
    pub fn run<T>(&self, endpoint: &str, mut f: impl FnMut() -> Result<T, NetError>) -> Result<T, NetError> {
        let mut attempt = 0;
        loop {
            match f() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retriable() && attempt < self.max_retries => {
                    tracing::debug!("attempt {} on {endpoint} failed: {e}", attempt + 1);
                    thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                Err(e) if e.is_retriable() => {
                    return Err(NetError::ConnectFailed {
                        endpoint: endpoint.to_owned(),
                        attempts: attempt + 1,
                        last: e.to_string(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Timeout for one request/response exchange.
pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(60);
/// Per-subscription queue between the reader thread and the handler.
pub const DISPATCH_QUEUE: usize = 1024;

struct SubEntry {
    tx: Sender<Notification>,
    stats: Arc<SubscriptionStats>,
}

#[derive(Debug, Default)]
pub struct SubscriptionStats {
    pub delivered: AtomicU64,
    /// Notifications dropped because the local handler fell behind.
    pub dropped: AtomicU64,
    /// Handler invocations that panicked.
    pub panics: AtomicU64,
}

/// One TCP connection to a memory server.
pub struct Connection {
    endpoint: String,
    writer: Mutex<BufWriter<TcpStream>>,
    request: Mutex<()>,
    responses: Receiver<Frame>,
    subs: Arc<Mutex<HashMap<u64, SubEntry>>>,
    next_sub: AtomicU64,
    closed: Arc<AtomicBool>,
}

impl Connection {
    pub fn open(endpoint: &str) -> Result<Arc<Self>, NetError> {
        let stream = TcpStream::connect(endpoint)?;
        stream.set_nodelay(true)?;
        let read_half = stream.try_clone()?;
        let (tx, rx) = unbounded();
        let subs: Arc<Mutex<HashMap<u64, SubEntry>>> = Arc::default();
        let closed = Arc::new(AtomicBool::new(false));
        {
            let subs = subs.clone();
            let closed = closed.clone();
            thread::spawn(move || reader_loop(read_half, tx, &subs, &closed));
        }
        Ok(Arc::new(Connection {
            endpoint: endpoint.to_owned(),
            writer: Mutex::new(BufWriter::new(stream)),
            request: Mutex::new(()),
            responses: rx,
            subs,
            next_sub: AtomicU64::new(1),
            closed,
        }))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    /// Sends one request and waits for its reply.
    pub fn request(&self, frame: &Frame, reply: MsgType) -> Result<Frame, NetError> {
        if self.is_closed() {
            return Err(NetError::Closed);
        }
        let _guard = self.request.lock();
        write_frame(&mut *self.writer.lock(), frame)?;
        match self.responses.recv_timeout(REQUEST_TIMEOUT) {
            Ok(f) => expect_type(f, reply),
            Err(RecvTimeoutError::Timeout) => Err(NetError::Protocol("request timed out".into())),
            Err(RecvTimeoutError::Disconnected) => Err(NetError::Closed),
        }
    }

    pub fn commit(&self, commit: &Commit) -> Result<CommitReply, NetError> {
        let reply = self.request(
            &Frame::new(MsgType::Commit, commit_to_data(commit)),
            MsgType::CommitStatus,
        )?;
        CommitReply::from_data(&reply.payload)
    }

    pub fn query(&self, q: &Query) -> Result<QueryReply, NetError> {
        let reply = self.request(&Frame::new(MsgType::Query, query_to_data(q)), MsgType::QueryResult)?;
        QueryReply::from_data(&reply.payload)
    }

    /// Sends an admin command; `args` must be a map or `Null`.
    pub fn admin(&self, command: &str, args: DataObject) -> Result<DataObject, NetError> {
        let mut m = match args {
            DataObject::Map(m) => m,
            DataObject::Null => Default::default(),
            _ => return Err(NetError::Protocol("admin arguments must be a map".into())),
        };
        m.insert("command".into(), DataObject::string(command));
        Ok(self
            .request(&Frame::new(MsgType::Admin, DataObject::Map(m)), MsgType::Admin)?
            .payload)
    }

    /// Registers `handler` for updates under `prefix`. The handler runs on its
    /// own thread; a panic is counted and does not stop later deliveries.
    pub fn subscribe(
        self: &Arc<Self>,
        prefix: &MemoryId,
        mut handler: impl FnMut(Notification) + Send + 'static,
    ) -> Result<Subscription, NetError> {
        let id = self.next_sub.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = bounded::<Notification>(DISPATCH_QUEUE);
        let stats = Arc::new(SubscriptionStats::default());
        self.subs.lock().insert(
            id,
            SubEntry {
                tx,
                stats: stats.clone(),
            },
        );
        {
            let stats = stats.clone();
            thread::spawn(move || {
                for n in rx {
                    if catch_unwind(AssertUnwindSafe(|| handler(n))).is_err() {
                        stats.panics.fetch_add(1, Ordering::Relaxed);
                    }
                }
            });
        }
        if let Err(e) = self.request(
            &Frame::new(MsgType::Subscribe, subscribe_to_data(prefix, id)),
            MsgType::Subscribe,
        ) {
            self.subs.lock().remove(&id);
            return Err(e);
        }
        Ok(Subscription {
            conn: self.clone(),
            id,
            prefix: prefix.clone(),
            stats,
            active: true,
        })
    }

    fn unsubscribe(&self, id: u64) -> Result<(), NetError> {
        self.subs.lock().remove(&id);
        let payload = DataObject::map([("sub", DataObject::Int64(id as i64))]);
        self.request(&Frame::new(MsgType::Unsubscribe, payload), MsgType::Unsubscribe)
            .map(|_| ())
    }

    pub fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        let _ = self.writer.lock().get_ref().shutdown(std::net::Shutdown::Both);
        self.subs.lock().clear();
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.close();
    }
}

fn reader_loop(stream: TcpStream, responses: Sender<Frame>, subs: &Mutex<HashMap<u64, SubEntry>>, closed: &AtomicBool) {
    let mut reader = BufReader::new(stream);
    loop {
        match read_frame(&mut reader) {
            Ok(Some(f)) if f.ty == MsgType::Notify => {
                let Ok(n) = Notification::from_data(&f.payload) else {
                    continue;
                };
                let subs = subs.lock();
                let Some(entry) = subs.get(&n.sub) else { continue };
                match entry.tx.try_send(n) {
                    Ok(()) => entry.stats.delivered.fetch_add(1, Ordering::Relaxed),
                    Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                        entry.stats.dropped.fetch_add(1, Ordering::Relaxed)
                    }
                };
            }
            Ok(Some(f)) => {
                if responses.send(f).is_err() {
                    break;
                }
            }
            Ok(None) | Err(_) => break,
        }
    }
    closed.store(true, Ordering::SeqCst);
    subs.lock().clear();
}

/// A live subscription; dropping it unsubscribes.
pub struct Subscription {
    conn: Arc<Connection>,
    id: u64,
    prefix: MemoryId,
    stats: Arc<SubscriptionStats>,
    active: bool,
}

impl Subscription {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn prefix(&self) -> &MemoryId {
        &self.prefix
    }

    pub fn stats(&self) -> &SubscriptionStats {
        &self.stats
    }

    pub fn unsubscribe(mut self) -> Result<(), NetError> {
        self.active = false;
        self.conn.unsubscribe(self.id)
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        if self.active && !self.conn.is_closed() {
            let _ = self.conn.unsubscribe(self.id);
        }
    }
}

/// Resolves memory names through the name service and caches one connection per memory.
pub struct MemoryClient {
    mns: String,
    retry: RetryPolicy,
    connections: Mutex<HashMap<String, Arc<Connection>>>,
    cache_hits: AtomicU64,
    resolutions: AtomicU64,
}

impl MemoryClient {
    pub fn new(mns: impl Into<String>) -> Self {
        Self::with_retry(mns, RetryPolicy::default())
    }

    pub fn with_retry(mns: impl Into<String>, retry: RetryPolicy) -> Self {
        MemoryClient {
            mns: mns.into(),
            retry,
            connections: Mutex::default(),
            cache_hits: AtomicU64::new(0),
            resolutions: AtomicU64::new(0),
        }
    }

    /// Client for the name service given by `EPIMEM_MNS`, or the default endpoint.
    pub fn from_env() -> Self {
        Self::new(std::env::var(crate::config::MNS_ENV).unwrap_or_else(|_| crate::config::DEFAULT_MNS.to_owned()))
    }

    pub fn mns(&self) -> &str {
        &self.mns
    }

    /// Connection to the memory named by the first component of `id_text`.
    pub fn connect(&self, id_text: &str) -> Result<Arc<Connection>, NetError> {
        let name = MemoryId::parse(id_text)?.memory_name().to_owned();
        if let Some(c) = self.connections.lock().get(&name) {
            if !c.is_closed() {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(c.clone());
            }
        }
        let endpoint = self.retry.run(&self.mns, || mns_resolve(&self.mns, &name))?;
        self.resolutions.fetch_add(1, Ordering::Relaxed);
        let conn = self.retry.run(&endpoint, || Connection::open(&endpoint))?;
        self.connections.lock().insert(name, conn.clone());
        Ok(conn)
    }

    pub fn commit(&self, commit: &Commit) -> Result<CommitReply, NetError> {
        let first = commit
            .updates
            .first()
            .ok_or_else(|| NetError::Protocol("empty commit".into()))?;
        self.connect(&first.entity_id.to_string())?.commit(commit)
    }

    pub fn query(&self, memory: &str, q: &Query) -> Result<QueryReply, NetError> {
        self.connect(memory)?.query(q)
    }

    pub fn subscribe(
        &self,
        prefix: &MemoryId,
        handler: impl FnMut(Notification) + Send + 'static,
    ) -> Result<Subscription, NetError> {
        self.connect(&prefix.to_string())?.subscribe(prefix, handler)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    /// Name-service lookups that led to a new connection.
    pub fn resolutions(&self) -> u64 {
        self.resolutions.load(Ordering::Relaxed)
    }

    pub fn close(&self) {
        for (_, c) in self.connections.lock().drain() {
            c.close();
        }
    }
}

impl Drop for MemoryClient {
    fn drop(&mut self) {
        self.close();
    }
}
