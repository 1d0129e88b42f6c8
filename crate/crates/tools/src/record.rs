//! Recording notified snapshots to a file and replaying them into a server.
//!
//! A record file is a sequence of entries, each a u32 LE length followed by
//! one wire frame. Entries come in pairs: the NOTIFY frame as received, then
//! a QUERY_RESULT frame holding the notified snapshots below the recorded
//! prefix and their links.

use std::io::{self, BufReader, Read, Write};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::RecvTimeoutError;
use epimem_core::model::{Commit, EntityUpdate, Query};
use epimem_core::MemoryId;
use epimem_net::frame::{read_frame, Frame, MsgType};
use epimem_net::protocol::{Notification, QueryReply};
use epimem_net::{Connection, NetError};

#[derive(Debug, Clone, PartialEq)]
pub struct RecordEntry {
    pub notification: Notification,
    pub reply: QueryReply,
}

fn write_entry<W: Write>(out: &mut W, frame: &Frame) -> io::Result<()> {
    let bytes = frame.to_bytes();
    out.write_all(&(bytes.len() as u32).to_le_bytes())?;
    out.write_all(&bytes)
}

fn read_entry<R: Read>(r: &mut R) -> Result<Option<Frame>, NetError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let mut buf = vec![0; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    let mut slice = &buf[..];
    let frame = read_frame(&mut slice)?.ok_or_else(|| NetError::Protocol("empty record entry".into()))?;
    if !slice.is_empty() {
        return Err(NetError::Protocol("trailing bytes in record entry".into()));
    }
    Ok(Some(frame))
}

/// Subscribes to `prefix` and appends one entry pair per notification until
/// `count` notifications were written, or until `keep_going` returns false.
pub fn record<W: Write>(
    conn: &Arc<Connection>,
    prefix: &MemoryId,
    out: &mut W,
    count: Option<usize>,
    mut keep_going: impl FnMut() -> bool,
) -> Result<usize, NetError> {
    let (tx, rx) = crossbeam_channel::unbounded();
    let sub = conn.subscribe(prefix, move |n| {
        let _ = tx.send(n);
    })?;
    let mut written = 0;
    while count.is_none_or(|c| written < c) && keep_going() {
        let n = match rx.recv_timeout(Duration::from_millis(200)) {
            Ok(n) => n,
            Err(RecvTimeoutError::Timeout) if !conn.is_closed() => continue,
            Err(_) => break,
        };
        let below: Vec<&MemoryId> = n.ids.iter().filter(|id| prefix.is_prefix_of(id)).collect();
        let mut q = Query::snapshots(below);
        q.with_links = true;
        let reply = conn.query(&q)?;
        write_entry(out, &Frame::new(MsgType::Notify, n.to_data()))?;
        write_entry(out, &Frame::new(MsgType::QueryResult, reply.to_data()))?;
        written += 1;
    }
    out.flush()?;
    sub.unsubscribe()?;
    Ok(written)
}

pub fn read_record<R: Read>(r: R) -> Result<Vec<RecordEntry>, NetError> {
    let mut r = BufReader::new(r);
    let mut entries = Vec::new();
    while let Some(first) = read_entry(&mut r)? {
        let second =
            read_entry(&mut r)?.ok_or_else(|| NetError::Protocol("record ends after a NOTIFY entry".into()))?;
        if first.ty != MsgType::Notify || second.ty != MsgType::QueryResult {
            return Err(NetError::Protocol(format!(
                "expected NOTIFY and QUERY_RESULT, got {:?} and {:?}",
                first.ty, second.ty
            )));
        }
        entries.push(RecordEntry {
            notification: Notification::from_data(&first.payload)?,
            reply: QueryReply::from_data(&second.payload)?,
        });
    }
    Ok(entries)
}

/// The commit that recreates the snapshots of one entry.
pub fn entry_commit(entry: &RecordEntry) -> Commit {
    let r = &entry.reply.result;
    let updates = r
        .snapshots()
        .filter_map(|(id, s)| {
            let entity = id.entity_prefix()?;
            let mut u = EntityUpdate::new(entity, s.timestamp, s.data().cloned().collect());
            u.produced_at = s.instances.first().and_then(|i| i.metadata.produced_at);
            if let Some(links) = r.links.get(id) {
                u = u.with_links(links.iter().cloned());
            }
            Some(u)
        })
        .collect();
    Commit::new(updates)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayStats {
    pub entries: usize,
    pub snapshots: usize,
    pub rejected: usize,
}

/// Recommits every recorded snapshot, in file order.
pub fn replay(conn: &Connection, entries: &[RecordEntry]) -> Result<ReplayStats, NetError> {
    let mut stats = ReplayStats::default();
    for e in entries {
        let commit = entry_commit(e);
        if commit.updates.is_empty() {
            continue;
        }
        let reply = conn.commit(&commit)?;
        let accepted = reply.accepted().count();
        stats.snapshots += accepted;
        stats.rejected += commit.updates.len() - accepted;
        stats.entries += 1;
    }
    Ok(stats)
}
