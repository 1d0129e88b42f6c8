//! Memory Name System: resolves memory names to server endpoints.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter};
use std::net::TcpStream;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use epimem_core::{DataObject, MemoryId, Time};
use parking_lot::Mutex;

use crate::acceptor::Acceptor;
use crate::error::NetError;
use crate::frame::{read_frame, write_frame, Frame, MsgType};
use crate::protocol::{error_frame, expect_type, str_field};

pub const HEARTBEAT_US: i64 = 5_000_000;
pub const MISSED_BEATS: i64 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnsRecord {
    pub memory_name: String,
    pub endpoint: String,
    pub registered_at: Time,
    pub last_heartbeat: Time,
}

/// Registry state. Registration with the same endpoint counts as a heartbeat;
/// a different endpoint replaces the record.
#[derive(Debug, Default)]
pub struct MnsRegistry {
    records: HashMap<String, MnsRecord>,
}

impl MnsRegistry {
    pub fn register(&mut self, name: &str, endpoint: &str, now: Time) -> Result<(), NetError> {
        MemoryId::memory(name)?;
        match self.records.get_mut(name) {
            Some(r) if r.endpoint == endpoint => r.last_heartbeat = now,
            _ => {
                self.records.insert(
                    name.to_owned(),
                    MnsRecord {
                        memory_name: name.to_owned(),
                        endpoint: endpoint.to_owned(),
                        registered_at: now,
                        last_heartbeat: now,
                    },
                );
            }
        }
        Ok(())
    }

    /// Endpoint of the memory named by the first component of `id_text`.
    pub fn resolve(&self, id_text: &str, now: Time) -> Result<&MnsRecord, NetError> {
        let id = MemoryId::parse(id_text)?;
        self.records
            .get(id.memory_name())
            .filter(|r| !expired(r, now))
            .ok_or_else(|| NetError::NotFound(id.memory_name().to_owned()))
    }

    /// Drops records that missed too many heartbeats; returns how many.
    pub fn expire(&mut self, now: Time) -> usize {
        let before = self.records.len();
        self.records.retain(|_, r| !expired(r, now));
        before - self.records.len()
    }

    pub fn records(&self) -> impl Iterator<Item = &MnsRecord> {
        self.records.values()
    }
}

fn expired(r: &MnsRecord, now: Time) -> bool {
    now.0 - r.last_heartbeat.0 > HEARTBEAT_US * MISSED_BEATS
}

/// Name-service process.
pub struct MnsServer {
    acceptor: Acceptor,
    registry: Arc<Mutex<MnsRegistry>>,
}

impl MnsServer {
    pub fn start(addr: &str) -> Result<Self, NetError> {
        let registry: Arc<Mutex<MnsRegistry>> = Arc::default();
        let reg = registry.clone();
        let acceptor = Acceptor::bind(addr, "mns", Arc::new(move |s| serve_connection(s, &reg)))?;
        tracing::info!("mns listening on {}", acceptor.local_addr());
        Ok(MnsServer { acceptor, registry })
    }

    pub fn endpoint(&self) -> String {
        self.acceptor.local_addr().to_string()
    }

    pub fn registry(&self) -> &Arc<Mutex<MnsRegistry>> {
        &self.registry
    }

    pub fn shutdown(&mut self) {
        self.acceptor.shutdown();
    }
}

fn serve_connection(stream: TcpStream, registry: &Mutex<MnsRegistry>) {
    let Ok(write_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(stream);
    let mut writer = BufWriter::new(write_half);
    while let Ok(Some(frame)) = read_frame(&mut reader) {
        let reply = handle(&frame, registry).unwrap_or_else(|e| error_frame(e.code(), &e.to_string()));
        if write_frame(&mut writer, &reply).is_err() {
            break;
        }
    }
}

fn handle(frame: &Frame, registry: &Mutex<MnsRegistry>) -> Result<Frame, NetError> {
    let now = Time::now();
    let p = &frame.payload;
    match frame.ty {
        MsgType::MnsRegister => {
            let (name, endpoint) = (str_field(p, "name")?, str_field(p, "endpoint")?);
            registry.lock().register(name, endpoint, now)?;
            Ok(Frame::new(MsgType::MnsRegister, p.clone()))
        }
        MsgType::MnsResolve => {
            let mut reg = registry.lock();
            reg.expire(now);
            let r = reg.resolve(str_field(p, "id")?, now)?;
            Ok(Frame::new(
                MsgType::MnsResult,
                DataObject::map([
                    ("name", DataObject::string(&r.memory_name)),
                    ("endpoint", DataObject::string(&r.endpoint)),
                ]),
            ))
        }
        other => Err(NetError::Protocol(format!("name service does not handle {other:?}"))),
    }
}

fn exchange(mns: &str, frame: &Frame) -> Result<Frame, NetError> {
    let mut stream = TcpStream::connect(mns)?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    write_frame(&mut stream, frame)?;
    read_frame(&mut stream)?.ok_or(NetError::Closed)
}

pub fn mns_register(mns: &str, name: &str, endpoint: &str) -> Result<(), NetError> {
    let req = Frame::new(
        MsgType::MnsRegister,
        DataObject::map([
            ("name", DataObject::string(name)),
            ("endpoint", DataObject::string(endpoint)),
        ]),
    );
    expect_type(exchange(mns, &req)?, MsgType::MnsRegister).map(|_| ())
}

pub fn mns_resolve(mns: &str, id_text: &str) -> Result<String, NetError> {
    let req = Frame::new(
        MsgType::MnsResolve,
        DataObject::map([("id", DataObject::string(id_text))]),
    );
    let reply = expect_type(exchange(mns, &req)?, MsgType::MnsResult)?;
    Ok(str_field(&reply.payload, "endpoint")?.to_owned())
}

/// Re-registers periodically until dropped.
pub struct Heartbeat {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Heartbeat {
    pub fn start(mns: String, name: String, endpoint: String, period: Duration) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::spawn(move || {
            let tick = Duration::from_millis(50);
            let mut waited = period;
            while !flag.load(Ordering::SeqCst) {
                if waited >= period {
                    if let Err(e) = mns_register(&mns, &name, &endpoint) {
                        tracing::warn!("mns heartbeat for {name} failed: {e}");
                    }
                    waited = Duration::ZERO;
                }
                thread::sleep(tick);
                waited += tick;
            }
        });
        Heartbeat {
            stop,
            thread: Some(thread),
        }
    }
}

impl Drop for Heartbeat {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_uses_the_memory_component() {
        let mut r = MnsRegistry::default();
        r.register("Object", "E1", Time(0)).unwrap();
        assert_eq!(r.resolve("Object/Instance", Time(1)).unwrap().endpoint, "E1");
        assert!(matches!(r.resolve("Nonexistent", Time(1)), Err(NetError::NotFound(_))));
        assert!(matches!(r.resolve("a//b", Time(1)), Err(NetError::Id(_))));
        r.register("Object", "E2", Time(2)).unwrap();
        assert_eq!(r.resolve("Object", Time(3)).unwrap().endpoint, "E2");
    }

    #[test]
    fn records_expire_after_missed_heartbeats() {
        let mut r = MnsRegistry::default();
        r.register("M", "E", Time(0)).unwrap();
        r.register("M", "E", Time(4_000_000)).unwrap();
        let rec = r.resolve("M", Time(4_000_000)).unwrap();
        assert_eq!((rec.registered_at, rec.last_heartbeat), (Time(0), Time(4_000_000)));
        assert!(r.resolve("M", Time(19_000_000)).is_ok());
        assert!(r.resolve("M", Time(19_000_001)).is_err());
        assert_eq!(r.expire(Time(19_000_001)), 1);
    }

    #[test]
    fn empty_name_is_rejected() {
        assert!(MnsRegistry::default().register("", "E", Time(0)).is_err());
    }

    #[test]
    fn wire_round_trip() {
        let mut server = MnsServer::start("127.0.0.1:0").unwrap();
        let ep = server.endpoint();
        mns_register(&ep, "Object", "127.0.0.1:1").unwrap();
        assert_eq!(mns_resolve(&ep, "Object/Instance").unwrap(), "127.0.0.1:1");
        let err = mns_resolve(&ep, "Ghost").unwrap_err();
        assert!(
            matches!(err, NetError::Remote { ref code, .. } if code == "not-found"),
            "{err}"
        );
        server.shutdown();
    }
}
