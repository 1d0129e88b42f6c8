//! Stream-processing stages: subscribe to an input prefix, transform the new
//! snapshots, commit the result with links back to its inputs.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{unbounded, RecvTimeoutError};
use epimem_core::model::{Commit, EntityUpdate, Query, QueryResult, SnapshotSelector};
use epimem_core::{DataObject, MemoryId, Time};

use crate::client::{Connection, Subscription};
use crate::error::NetError;

pub type Transform = Box<dyn FnMut(&QueryResult) -> Result<Vec<DataObject>, String> + Send>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputMode {
    /// Fetch exactly the snapshots named by the notifications.
    #[default]
    NotifiedIds,
    /// Fetch the latest snapshot of every entity under the input prefix.
    Latest,
}

pub struct PipelineStage {
    pub input: MemoryId,
    /// Output entity id; `{entity}` is replaced by the input entity's name.
    pub output: String,
    pub transform: Transform,
    /// Collapse notifications that queued up during processing to the newest
    /// snapshot of each entity.
    pub coalesce: bool,
    pub mode: InputMode,
}

impl PipelineStage {
    pub fn new(
        input: MemoryId,
        output: impl Into<String>,
        transform: impl FnMut(&QueryResult) -> Result<Vec<DataObject>, String> + Send + 'static,
    ) -> Self {
        PipelineStage {
            input,
            output: output.into(),
            transform: Box::new(transform),
            coalesce: true,
            mode: InputMode::NotifiedIds,
        }
    }

    pub fn coalesce(mut self, on: bool) -> Self {
        self.coalesce = on;
        self
    }

    pub fn mode(mut self, mode: InputMode) -> Self {
        self.mode = mode;
        self
    }
}

#[derive(Debug, Default)]
pub struct StageStats {
    /// Transform invocations.
    pub batches: AtomicU64,
    pub outputs: AtomicU64,
    pub errors: AtomicU64,
    /// Notifications merged into a later batch.
    pub coalesced: AtomicU64,
}

pub struct StageHandle {
    stats: Arc<StageStats>,
    stop: Arc<AtomicBool>,
    worker: Option<JoinHandle<()>>,
    subscription: Option<Subscription>,
}

impl StageHandle {
    pub fn stats(&self) -> &StageStats {
        &self.stats
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.subscription.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for StageHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts `stage`, reading from `input` and committing to `output`.
pub fn run_stage(
    input: &Arc<Connection>,
    output: Arc<Connection>,
    mut stage: PipelineStage,
) -> Result<StageHandle, NetError> {
    MemoryId::parse(&stage.output.replace("{entity}", "x"))?;
    let (tx, rx) = unbounded();
    let subscription = input.subscribe(&stage.input, move |n| {
        let _ = tx.send(n);
    })?;
    let stats = Arc::new(StageStats::default());
    let stop = Arc::new(AtomicBool::new(false));
    let input = input.clone();
    let worker = {
        let stats = stats.clone();
        let stop = stop.clone();
        thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                let first = match rx.recv_timeout(Duration::from_millis(50)) {
                    Ok(n) => n,
                    Err(RecvTimeoutError::Timeout) => continue,
                    Err(RecvTimeoutError::Disconnected) => break,
                };
                let mut ids = first.ids;
                if stage.coalesce {
                    for n in rx.try_iter() {
                        stats.coalesced.fetch_add(1, Ordering::Relaxed);
                        ids.extend(n.ids);
                    }
                }
                for group in by_entity(&stage.input, ids, stage.coalesce) {
                    match process(&input, &output, &mut stage, &group) {
                        Ok(produced) => {
                            stats.batches.fetch_add(1, Ordering::Relaxed);
                            stats.outputs.fetch_add(produced as u64, Ordering::Relaxed);
                        }
                        Err(e) => {
                            tracing::warn!("pipeline stage on {} failed: {e}", stage.input);
                            stats.errors.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                }
            }
        })
    };
    Ok(StageHandle {
        stats,
        stop,
        worker: Some(worker),
        subscription: Some(subscription),
    })
}

/// Notified ids under `input`, grouped per entity; with `latest_only` each
/// group holds just the newest snapshot.
fn by_entity(input: &MemoryId, ids: Vec<MemoryId>, latest_only: bool) -> Vec<Vec<MemoryId>> {
    let mut groups: BTreeMap<MemoryId, Vec<MemoryId>> = BTreeMap::new();
    for id in ids.into_iter().filter(|id| input.is_prefix_of(id)) {
        if let Some(e) = id.entity_prefix() {
            groups.entry(e).or_default().push(id);
        }
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort_by_key(|id| id.timestamp());
            g.dedup();
            if latest_only {
                g.drain(..g.len() - 1);
            }
            g
        })
        .collect()
}

fn process(
    input: &Connection,
    output: &Connection,
    stage: &mut PipelineStage,
    ids: &[MemoryId],
) -> Result<usize, NetError> {
    let q = match stage.mode {
        InputMode::NotifiedIds => Query::snapshots(ids),
        InputMode::Latest => Query::prefix(
            &ids[0].entity_prefix().expect("grouped by entity"),
            SnapshotSelector::Latest,
        ),
    };
    let result = input.query(&q)?.result;
    if result.ids.is_empty() {
        return Ok(0);
    }
    let data = (stage.transform)(&result).map_err(NetError::Protocol)?;
    if data.is_empty() {
        return Ok(0);
    }
    let newest = result
        .ids
        .iter()
        .max_by_key(|id| (id.timestamp(), (*id).clone()))
        .expect("non-empty");
    let timestamp: Time = newest.timestamp().expect("snapshot id");
    let entity = MemoryId::parse(
        &stage
            .output
            .replace("{entity}", newest.entity_name().unwrap_or_default()),
    )?;
    let update = EntityUpdate::new(entity, timestamp, data).with_links(result.ids.iter().cloned());
    let reply = output.commit(&Commit::single(update))?;
    match reply.statuses.into_iter().next() {
        Some(Ok(_)) => Ok(1),
        Some(Err(e)) => Err(NetError::Remote {
            code: e.code,
            message: e.message,
        }),
        None => Err(NetError::Protocol("empty commit status".into())),
    }
}
