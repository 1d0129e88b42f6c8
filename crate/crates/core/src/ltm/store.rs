//! Disk-backed long-term store: one append-only record log and sidecar index per
//! core segment, plus one latent model file per encoded entity.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::error::LtmError;
use crate::idf::{codec, DataObject, Time, TypeObject};
use crate::layout::{decompose, flatten, variable_length_lists, Decomposed, Layout};
use crate::ltm::compress::{compress_instance, decompress_instance};
use crate::ltm::filter::FilterPolicy;
use crate::ltm::latent::{LatentConfig, LatentEncoder, LatentModel, LinearEncoder};
use crate::ltm::record::{path_to_data, Blob, InstanceRecord, LtmRecord, LtmTier, SidecarMetadata};
use crate::model::{EntityInstance, EntitySnapshot, History, Level, MemoryId, Tier};

pub const FORMAT_VERSION: u32 = 1;
pub const CODEC_LATENT: &str = "latent-f64";
const LOG_FILE: &str = "records.log";
const INDEX_FILE: &str = "sidecar.idx";
const MODEL_DIR: &str = "models";
const FRAME_HEADER: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtmOptions {
    /// fsync after every append.
    pub sync: bool,
    pub filter: FilterPolicy,
    pub latent: LatentConfig,
}

impl Default for LtmOptions {
    fn default() -> Self {
        LtmOptions {
            sync: true,
            filter: FilterPolicy::keep_all(),
            latent: LatentConfig::default(),
        }
    }
}

/// Removal predicate: every record under `prefix`, optionally limited to an
/// inclusive time range and a provider segment name.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgetFilter {
    pub prefix: MemoryId,
    pub range: Option<(Time, Time)>,
    pub provider: Option<String>,
}

impl ForgetFilter {
    pub fn prefix(prefix: MemoryId) -> Self {
        ForgetFilter {
            prefix,
            range: None,
            provider: None,
        }
    }

    fn matches(&self, s: &SidecarMetadata) -> bool {
        self.prefix.is_prefix_of(&s.id)
            && self
                .range
                .is_none_or(|(a, b)| s.id.timestamp().is_some_and(|t| a <= t && t <= b))
            && self.provider.as_ref().is_none_or(|p| *p == s.provider)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeReport {
    pub entity: MemoryId,
    pub encoded: usize,
    /// Snapshots left on the online tier because their layout differs.
    pub skipped: usize,
    pub d: usize,
    pub k: usize,
    pub zero_variance: bool,
    pub has_dynamics: bool,
    pub original_bytes: u64,
    pub stored_bytes_before: u64,
    pub stored_bytes_after: u64,
    pub model_bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LtmStats {
    pub records: usize,
    pub online_records: usize,
    pub latent_records: usize,
    pub original_bytes: u64,
    pub stored_bytes: u64,
    pub models: usize,
    pub stale_models: usize,
}

#[derive(Debug, Clone)]
struct IndexEntry {
    offset: u64,
    len: u32,
    sidecar: SidecarMetadata,
}

struct Segment {
    log: File,
    log_len: u64,
    dirty: bool,
}

/// Timestamp, layout and flattened leaves of an admitted snapshot.
type Admitted = (Time, Layout, Vec<f64>);

pub struct LtmStore {
    dir: PathBuf,
    memory: String,
    opts: LtmOptions,
    // Lock order: segments, then index, then models.
    segments: Mutex<HashMap<String, Segment>>,
    index: RwLock<BTreeMap<MemoryId, IndexEntry>>,
    models: RwLock<HashMap<MemoryId, Arc<LatentModel>>>,
    /// Last admitted snapshot per entity, for the similarity filter.
    admitted: Mutex<HashMap<MemoryId, Admitted>>,
    decodes: AtomicU64,
}

fn integrity(id: &MemoryId, reason: impl Into<String>) -> LtmError {
    LtmError::Integrity {
        record: id.to_string(),
        reason: reason.into(),
    }
}

fn bad_file(path: &FsPath, reason: &str) -> LtmError {
    LtmError::Integrity {
        record: path.display().to_string(),
        reason: reason.to_owned(),
    }
}

fn crc32(bytes: &[u8]) -> u32 {
    let mut c = flate2::Crc::new();
    c.update(bytes);
    c.sum()
}

/// Writes `version ‖ encode(value)` atomically via a temporary file.
fn write_versioned(path: &FsPath, value: &DataObject) -> io::Result<u64> {
    let mut bytes = FORMAT_VERSION.to_le_bytes().to_vec();
    codec::encode_into(value, &mut bytes);
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(bytes.len() as u64)
}

fn read_versioned(path: &FsPath) -> Result<DataObject, LtmError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 {
        return Err(bad_file(path, "missing version header"));
    }
    let version = u32::from_le_bytes(bytes[..4].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(LtmError::Version {
            file: path.display().to_string(),
            found: version,
        });
    }
    codec::decode(&bytes[4..]).map_err(|e| bad_file(path, &e.to_string()))
}

impl LtmStore {
    /// Opens or creates the store for `memory` under `root`.
    pub fn open(root: impl AsRef<FsPath>, memory: &str, opts: LtmOptions) -> Result<Self, LtmError> {
        let dir = root.as_ref().join(memory);
        fs::create_dir_all(&dir)?;
        let store = LtmStore {
            dir,
            memory: memory.to_owned(),
            opts,
            segments: Mutex::new(HashMap::new()),
            index: RwLock::new(BTreeMap::new()),
            models: RwLock::new(HashMap::new()),
            admitted: Mutex::new(HashMap::new()),
            decodes: AtomicU64::new(0),
        };
        let mut cores: Vec<String> = fs::read_dir(&store.dir)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(LOG_FILE).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        cores.sort();
        for core in cores {
            store.load_segment(&core)?;
        }
        Ok(store)
    }

    pub fn memory_name(&self) -> &str {
        &self.memory
    }

    pub fn options(&self) -> &LtmOptions {
        &self.opts
    }

    fn core_dir(&self, core: &str) -> PathBuf {
        self.dir.join(core)
    }

    fn model_path(&self, entity: &MemoryId) -> PathBuf {
        self.core_dir(entity.core_segment().unwrap_or_default())
            .join(MODEL_DIR)
            .join(entity.provider_segment().unwrap_or_default())
            .join(format!("{}.model", entity.entity_name().unwrap_or_default()))
    }

    fn load_segment(&self, core: &str) -> Result<(), LtmError> {
        let cdir = self.core_dir(core);
        let log_path = cdir.join(LOG_FILE);
        let log_len = fs::metadata(&log_path)?.len();
        let entries = match self.read_index(&cdir.join(INDEX_FILE), log_len) {
            Some(entries) => entries,
            None => self.scan_log(&log_path)?,
        };
        let log_len = fs::metadata(&log_path)?.len();
        let dirty = !cdir.join(INDEX_FILE).exists();
        let log = OpenOptions::new().append(true).open(&log_path)?;
        self.segments
            .lock()
            .insert(core.to_owned(), Segment { log, log_len, dirty });
        self.index
            .write()
            .extend(entries.into_iter().map(|e| (e.sidecar.id.clone(), e)));

        let mdir = cdir.join(MODEL_DIR);
        if mdir.is_dir() {
            for provider in fs::read_dir(&mdir)?.filter_map(|e| e.ok()) {
                for file in fs::read_dir(provider.path())?.filter_map(|e| e.ok()) {
                    let path = file.path();
                    if path.extension().is_some_and(|x| x == "model") {
                        let model = LatentModel::from_data(&read_versioned(&path)?).map_err(|e| bad_file(&path, &e))?;
                        self.models.write().insert(model.entity.clone(), Arc::new(model));
                    }
                }
            }
        }
        Ok(())
    }

    /// Index entries from `sidecar.idx`, or `None` if absent, unreadable or out of date.
    fn read_index(&self, path: &FsPath, log_len: u64) -> Option<Vec<IndexEntry>> {
        let v = read_versioned(path).ok()?;
        if v.get("log_len")?.as_i64()? as u64 != log_len {
            return None;
        }
        v.get("entries")?
            .as_list()?
            .iter()
            .map(|e| {
                Some(IndexEntry {
                    offset: e.get("offset")?.as_i64()? as u64,
                    len: e.get("len")?.as_i64()? as u32,
                    sidecar: SidecarMetadata::from_data(e.get("sidecar")?).ok()?,
                })
            })
            .collect()
    }

    /// Rebuilds index entries by reading every frame; a torn tail frame is cut off.
    fn scan_log(&self, path: &FsPath) -> Result<Vec<IndexEntry>, LtmError> {
        let bytes = fs::read(path)?;
        if bytes.len() < 4 {
            fs::write(path, FORMAT_VERSION.to_le_bytes())?;
            return Ok(Vec::new());
        }
        let version = u32::from_le_bytes(bytes[..4].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(LtmError::Version {
                file: path.display().to_string(),
                found: version,
            });
        }
        let mut latest: BTreeMap<MemoryId, IndexEntry> = BTreeMap::new();
        let mut pos = 4usize;
        while pos + FRAME_HEADER as usize <= bytes.len() {
            let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
            let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
            let start = pos + FRAME_HEADER as usize;
            let Some(payload) = bytes.get(start..start + len as usize) else {
                break;
            };
            if crc32(payload) != crc {
                break;
            }
            let record = codec::decode(payload)
                .ok()
                .and_then(|v| v.get("sidecar").and_then(|s| SidecarMetadata::from_data(s).ok()));
            let Some(sidecar) = record else { break };
            latest.insert(
                sidecar.id.clone(),
                IndexEntry {
                    offset: pos as u64,
                    len,
                    sidecar,
                },
            );
            pos = start + len as usize;
        }
        if pos < bytes.len() {
            OpenOptions::new().write(true).open(path)?.set_len(pos as u64)?;
        }
        Ok(latest.into_values().collect())
    }

    fn segment<'a>(&self, segs: &'a mut HashMap<String, Segment>, core: &str) -> Result<&'a mut Segment, LtmError> {
        if !segs.contains_key(core) {
            let cdir = self.core_dir(core);
            fs::create_dir_all(&cdir)?;
            let path = cdir.join(LOG_FILE);
            let mut log = OpenOptions::new().create(true).append(true).open(&path)?;
            let mut log_len = log.metadata()?.len();
            if log_len == 0 {
                log.write_all(&FORMAT_VERSION.to_le_bytes())?;
                log_len = 4;
            }
            segs.insert(
                core.to_owned(),
                Segment {
                    log,
                    log_len,
                    dirty: true,
                },
            );
        }
        Ok(segs.get_mut(core).unwrap())
    }

    fn append(&self, seg: &mut Segment, record: &LtmRecord) -> Result<(u64, u32), LtmError> {
        let payload = codec::encode(&record.to_data());
        let len = u32::try_from(payload.len()).map_err(|_| integrity(record.id(), "record exceeds 4 GiB"))?;
        let mut frame = Vec::with_capacity(payload.len() + FRAME_HEADER as usize);
        frame.extend_from_slice(&len.to_le_bytes());
        frame.extend_from_slice(&crc32(&payload).to_le_bytes());
        frame.extend_from_slice(&payload);
        seg.log.write_all(&frame)?;
        let offset = seg.log_len;
        seg.log_len += frame.len() as u64;
        seg.dirty = true;
        Ok((offset, len))
    }

    /// Filters, compresses and durably appends one snapshot. `Ok(None)` when the
    /// filter policy drops it.
    pub fn consolidate(
        &self,
        snapshot_id: &MemoryId,
        snapshot: &EntitySnapshot,
        ty: Option<&TypeObject>,
        links: &[MemoryId],
        now: Time,
    ) -> Result<Option<SidecarMetadata>, LtmError> {
        let id = snapshot_id
            .truncated(Level::Snapshot)
            .filter(|i| i.memory_name() == self.memory)
            .ok_or_else(|| LtmError::NotFound(snapshot_id.to_string()))?;
        if !self.admit(&id, snapshot) {
            return Ok(None);
        }
        let instances: Vec<InstanceRecord> = snapshot
            .instances
            .iter()
            .map(|inst| {
                let (body, images) = compress_instance(&inst.data, ty);
                InstanceRecord {
                    index: inst.index,
                    metadata: inst.metadata.clone(),
                    body: Some(body),
                    images,
                }
            })
            .collect();
        let mut record = LtmRecord {
            instances,
            latent: None,
            sidecar: SidecarMetadata {
                id: id.clone(),
                provider: id.provider_segment().unwrap_or_default().to_owned(),
                tier: LtmTier::Online,
                original_size: snapshot.payload_size() as u64,
                stored_size: 0,
                committed_at: snapshot.instances.first().and_then(|i| i.metadata.committed_at),
                consolidated_at: now,
                extracted: Vec::new(),
                links: links.to_vec(),
            },
        };
        record.sidecar.stored_size = record.blob_bytes() as u64;
        let sidecar = record.sidecar.clone();
        let mut segs = self.segments.lock();
        let seg = self.segment(&mut segs, id.core_segment().unwrap_or_default())?;
        let (offset, len) = self.append(seg, &record)?;
        if self.opts.sync {
            seg.log.sync_data()?;
        }
        self.index.write().insert(
            id,
            IndexEntry {
                offset,
                len,
                sidecar: sidecar.clone(),
            },
        );
        Ok(Some(sidecar))
    }

    fn admit(&self, id: &MemoryId, snapshot: &EntitySnapshot) -> bool {
        let policy = &self.opts.filter;
        if policy.max_hz.is_infinite() && policy.similarity_epsilon == 0.0 {
            return true;
        }
        let entity = id.entity_prefix().expect("snapshot id");
        let (layout, x) = if policy.similarity_epsilon > 0.0 {
            flatten(&DataObject::List(snapshot.data().cloned().collect()))
        } else {
            Default::default()
        };
        let mut admitted = self.admitted.lock();
        let keep = match admitted.get(&entity) {
            None => true,
            Some((t, l, last)) => {
                let rate_ok = policy.max_hz.is_infinite() || (snapshot.timestamp.0 - t.0) as f64 * policy.max_hz >= 1e6;
                let distinct = *l != layout || {
                    let d2: f64 = x.iter().zip(last).map(|(a, b)| (a - b) * (a - b)).sum();
                    d2.sqrt() >= policy.similarity_epsilon
                };
                rate_ok && distinct
            }
        };
        if keep {
            admitted.insert(entity, (snapshot.timestamp, layout, x));
        }
        keep
    }

    fn read_record(&self, id: &MemoryId, entry: &IndexEntry) -> Result<LtmRecord, LtmError> {
        self.decodes.fetch_add(1, Ordering::Relaxed);
        let path = self.core_dir(id.core_segment().unwrap_or_default()).join(LOG_FILE);
        let mut f = File::open(path)?;
        f.seek(SeekFrom::Start(entry.offset))?;
        let mut buf = vec![0u8; entry.len as usize + FRAME_HEADER as usize];
        f.read_exact(&mut buf).map_err(|e| integrity(id, e.to_string()))?;
        let len = u32::from_le_bytes(buf[..4].try_into().unwrap());
        let crc = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        let payload = &buf[FRAME_HEADER as usize..];
        if len != entry.len || crc32(payload) != crc {
            return Err(integrity(id, "checksum mismatch"));
        }
        let value = codec::decode(payload).map_err(|e| integrity(id, e.to_string()))?;
        let record = LtmRecord::from_data(&value).map_err(|e| integrity(id, e))?;
        if record.id() != id {
            return Err(integrity(id, format!("frame holds {}", record.id())));
        }
        Ok(record)
    }

    /// Decodes the stored snapshot; instance-level IDs resolve to their snapshot.
    pub fn recall(&self, id: &MemoryId) -> Result<EntitySnapshot, LtmError> {
        let key = id
            .truncated(Level::Snapshot)
            .ok_or_else(|| LtmError::NotFound(id.to_string()))?;
        let record = {
            let index = self.index.read();
            let entry = index.get(&key).ok_or_else(|| LtmError::NotFound(key.to_string()))?;
            self.read_record(&key, entry)?
        };
        let timestamp = key.timestamp().expect("snapshot id");
        match record.tier() {
            LtmTier::Online => {
                let instances = record
                    .instances
                    .into_iter()
                    .map(|inst| {
                        let body = inst
                            .body
                            .as_ref()
                            .ok_or_else(|| integrity(&key, "online record without body"))?;
                        let data = decompress_instance(body, &inst.images).map_err(|e| integrity(&key, e))?;
                        Ok(EntityInstance {
                            index: inst.index,
                            data,
                            metadata: inst.metadata,
                        })
                    })
                    .collect::<Result<_, LtmError>>()?;
                Ok(EntitySnapshot {
                    timestamp,
                    instances,
                    tier: Tier::LtmOnline,
                })
            }
            LtmTier::Latent => {
                let entity = key.entity_prefix().expect("snapshot id");
                let model = self
                    .latent_model(&entity)
                    .ok_or_else(|| integrity(&key, "latent record without model"))?;
                let blob = record
                    .latent
                    .as_ref()
                    .ok_or_else(|| integrity(&key, "latent record without vector"))?;
                if blob.codec != CODEC_LATENT || blob.bytes.len() != model.k() * 8 {
                    return Err(integrity(&key, "latent vector does not match model"));
                }
                let z: Vec<f64> = blob
                    .bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                let x = model.encoder.decode(&z);
                let value = crate::layout::compose(&model.layout, &x, &record.sidecar.extracted);
                let data = match value {
                    DataObject::List(items) if items.len() == record.instances.len() => items,
                    _ => return Err(integrity(&key, "latent reconstruction has wrong instance count")),
                };
                let instances = record
                    .instances
                    .into_iter()
                    .zip(data)
                    .map(|(inst, data)| EntityInstance {
                        index: inst.index,
                        data,
                        metadata: inst.metadata,
                    })
                    .collect();
                Ok(EntitySnapshot {
                    timestamp,
                    instances,
                    tier: Tier::LtmLatent,
                })
            }
        }
    }

    pub fn exists(&self, id: &MemoryId) -> bool {
        id.truncated(Level::Snapshot)
            .is_some_and(|k| self.index.read().contains_key(&k))
    }

    pub fn sidecar(&self, id: &MemoryId) -> Option<SidecarMetadata> {
        let k = id.truncated(Level::Snapshot)?;
        self.index.read().get(&k).map(|e| e.sidecar.clone())
    }

    /// Snapshot IDs under `prefix` with timestamps in the inclusive range, ascending.
    pub fn list_ids(&self, prefix: &MemoryId, range: Option<(Time, Time)>) -> Vec<MemoryId> {
        let index = self.index.read();
        index
            .range(prefix.clone()..)
            .take_while(|(id, _)| prefix.is_prefix_of(id))
            .filter(|(id, _)| range.is_none_or(|(a, b)| id.timestamp().is_some_and(|t| a <= t && t <= b)))
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Entity IDs that own at least one record.
    pub fn entities(&self) -> Vec<MemoryId> {
        let index = self.index.read();
        let set: BTreeSet<MemoryId> = index.keys().filter_map(MemoryId::entity_prefix).collect();
        set.into_iter().collect()
    }

    /// Number of records decoded since the store was opened.
    pub fn decode_count(&self) -> u64 {
        self.decodes.load(Ordering::Relaxed)
    }

    pub fn latent_model(&self, entity: &MemoryId) -> Option<Arc<LatentModel>> {
        self.models.read().get(entity).cloned()
    }

    pub fn stats(&self) -> LtmStats {
        let index = self.index.read();
        let models = self.models.read();
        let mut s = LtmStats {
            records: index.len(),
            models: models.len(),
            stale_models: models.values().filter(|m| m.stale).count(),
            ..Default::default()
        };
        for e in index.values() {
            match e.sidecar.tier {
                LtmTier::Online => s.online_records += 1,
                LtmTier::Latent => s.latent_records += 1,
            }
            s.original_bytes += e.sidecar.original_size;
            s.stored_bytes += e.sidecar.stored_size;
        }
        s
    }

    /// Removes matching records, marks affected models stale and compacts the touched logs.
    pub fn forget(&self, filter: &ForgetFilter) -> Result<usize, LtmError> {
        let mut segs = self.segments.lock();
        let mut index = self.index.write();
        let doomed: Vec<MemoryId> = index
            .range(filter.prefix.clone()..)
            .take_while(|(id, _)| filter.prefix.is_prefix_of(id))
            .filter(|(_, e)| filter.matches(&e.sidecar))
            .map(|(id, _)| id.clone())
            .collect();
        if doomed.is_empty() {
            return Ok(0);
        }
        let mut cores = BTreeSet::new();
        for id in &doomed {
            index.remove(id);
            cores.insert(id.core_segment().unwrap_or_default().to_owned());
        }
        {
            let mut models = self.models.write();
            for id in &doomed {
                let entity = id.entity_prefix().expect("snapshot id");
                let t = id.timestamp().expect("snapshot id");
                if let Some(m) = models.get_mut(&entity) {
                    if !m.stale && m.trained_from <= t && t <= m.trained_to {
                        let mut updated = (**m).clone();
                        updated.stale = true;
                        write_versioned(&self.model_path(&entity), &updated.to_data())?;
                        *m = Arc::new(updated);
                    }
                }
            }
        }
        let mut admitted = self.admitted.lock();
        for id in &doomed {
            admitted.remove(&id.entity_prefix().expect("snapshot id"));
        }
        drop(admitted);
        for core in cores {
            self.compact(&mut segs, &mut index, &core)?;
        }
        Ok(doomed.len())
    }

    /// Rewrites a core segment's log with live records only and persists its index.
    fn compact(
        &self,
        segs: &mut HashMap<String, Segment>,
        index: &mut BTreeMap<MemoryId, IndexEntry>,
        core: &str,
    ) -> Result<(), LtmError> {
        let cdir = self.core_dir(core);
        let log_path = cdir.join(LOG_FILE);
        let tmp_path = cdir.join("records.log.tmp");
        let mut live: Vec<(&MemoryId, &mut IndexEntry)> = index
            .iter_mut()
            .filter(|(id, _)| id.core_segment() == Some(core))
            .collect();
        live.sort_by_key(|(_, e)| e.offset);
        let mut src = File::open(&log_path)?;
        let mut out = FORMAT_VERSION.to_le_bytes().to_vec();
        for (_, e) in live.iter_mut() {
            let mut frame = vec![0u8; e.len as usize + FRAME_HEADER as usize];
            src.seek(SeekFrom::Start(e.offset))?;
            src.read_exact(&mut frame)?;
            e.offset = out.len() as u64;
            out.extend_from_slice(&frame);
        }
        {
            let mut f = File::create(&tmp_path)?;
            f.write_all(&out)?;
            f.sync_all()?;
        }
        fs::rename(&tmp_path, &log_path)?;
        let log = OpenOptions::new().append(true).open(&log_path)?;
        segs.insert(
            core.to_owned(),
            Segment {
                log,
                log_len: out.len() as u64,
                dirty: true,
            },
        );
        self.write_index(segs, index, core)
    }

    fn write_index(
        &self,
        segs: &mut HashMap<String, Segment>,
        index: &BTreeMap<MemoryId, IndexEntry>,
        core: &str,
    ) -> Result<(), LtmError> {
        let Some(seg) = segs.get_mut(core) else { return Ok(()) };
        let entries: Vec<DataObject> = index
            .iter()
            .filter(|(id, _)| id.core_segment() == Some(core))
            .map(|(_, e)| {
                DataObject::map([
                    ("offset", DataObject::Int64(e.offset as i64)),
                    ("len", DataObject::Int64(e.len as i64)),
                    ("sidecar", e.sidecar.to_data()),
                ])
            })
            .collect();
        let v = DataObject::map([
            ("log_len", DataObject::Int64(seg.log_len as i64)),
            ("entries", DataObject::List(entries)),
        ]);
        seg.log.sync_data()?;
        write_versioned(&self.core_dir(core).join(INDEX_FILE), &v)?;
        seg.dirty = false;
        Ok(())
    }

    /// Syncs logs and rewrites out-of-date sidecar index files.
    pub fn flush(&self) -> Result<(), LtmError> {
        let mut segs = self.segments.lock();
        let index = self.index.read();
        let dirty: Vec<String> = segs.iter().filter(|(_, s)| s.dirty).map(|(c, _)| c.clone()).collect();
        for core in dirty {
            self.write_index(&mut segs, &index, &core)?;
        }
        Ok(())
    }

    /// Trains a latent model on an entity's stored history and moves every
    /// snapshot sharing the dominant layout to the latent tier.
    pub fn encode_offline(&self, entity: &MemoryId) -> Result<EncodeReport, LtmError> {
        self.encode_offline_with(entity, &self.opts.latent)
    }

    pub fn encode_offline_with(&self, entity: &MemoryId, cfg: &LatentConfig) -> Result<EncodeReport, LtmError> {
        let entity = entity
            .entity_prefix()
            .ok_or_else(|| LtmError::NotFound(entity.to_string()))?;
        let ids = self.list_ids(&entity, None);
        let no_layout = || LtmError::NoSharedLayout(entity.to_string());
        if ids.len() < 2 {
            return Err(no_layout());
        }
        let snapshots: Vec<EntitySnapshot> = ids.iter().map(|id| self.recall(id)).collect::<Result<_, _>>()?;
        let values: Vec<DataObject> = snapshots
            .iter()
            .map(|s| DataObject::List(s.data().cloned().collect()))
            .collect();
        let opaque = variable_length_lists(&values);
        let parts: Vec<Decomposed> = values.iter().map(|v| decompose(v, &opaque)).collect();

        let mut groups: Vec<(&Layout, Vec<usize>)> = Vec::new();
        for (i, p) in parts.iter().enumerate() {
            match groups.iter_mut().find(|(l, _)| **l == p.layout) {
                Some((_, members)) => members.push(i),
                None => groups.push((&p.layout, vec![i])),
            }
        }
        let (layout, members) = groups
            .into_iter()
            .rev()
            .max_by_key(|(_, m)| m.len())
            .expect("at least two snapshots");
        if members.len() < 2 || layout.dim() == 0 {
            return Err(no_layout());
        }
        let xs: Vec<Vec<f64>> = members.iter().map(|&i| parts[i].values.clone()).collect();
        let encoder = LinearEncoder::fit(&xs, cfg);
        let first = ids[members[0]].timestamp().unwrap();
        let last = ids[*members.last().unwrap()].timestamp().unwrap();
        let model = LatentModel {
            entity: entity.clone(),
            layout: layout.clone(),
            opaque_lists: opaque,
            step_us: ((last.0 - first.0) / (members.len() as i64 - 1)).max(1),
            trained_from: first,
            trained_to: last,
            snapshot_count: members.len(),
            stale: false,
            encoder,
        };

        let index_snapshot: Vec<SidecarMetadata> = {
            let index = self.index.read();
            members.iter().map(|&i| index[&ids[i]].sidecar.clone()).collect()
        };
        let mut records = Vec::with_capacity(members.len());
        for (&i, old) in members.iter().zip(&index_snapshot) {
            let z = model.encoder.encode(&parts[i].values);
            let blob = Blob::new(CODEC_LATENT, z.iter().flat_map(|v| v.to_le_bytes()).collect());
            let extracted = parts[i].extracted.clone();
            let extracted_bytes: usize = extracted
                .iter()
                .map(|(p, v)| codec::encoded_len(&path_to_data(p)) + codec::encoded_len(v))
                .sum();
            let record = LtmRecord {
                instances: snapshots[i]
                    .instances
                    .iter()
                    .map(|inst| InstanceRecord {
                        index: inst.index,
                        metadata: inst.metadata.clone(),
                        body: None,
                        images: Vec::new(),
                    })
                    .collect(),
                sidecar: SidecarMetadata {
                    tier: LtmTier::Latent,
                    stored_size: (blob.bytes.len() + extracted_bytes) as u64,
                    extracted,
                    ..old.clone()
                },
                latent: Some(blob),
            };
            records.push(record);
        }

        let core = entity.core_segment().unwrap_or_default().to_owned();
        let model_path = self.model_path(&entity);
        fs::create_dir_all(model_path.parent().unwrap())?;
        let model_bytes = write_versioned(&model_path, &model.to_data())?;

        let mut segs = self.segments.lock();
        let seg = self.segment(&mut segs, &core)?;
        let mut placed = Vec::with_capacity(records.len());
        for r in &records {
            placed.push(self.append(seg, r)?);
        }
        seg.log.sync_data()?;
        let mut index = self.index.write();
        let mut report = EncodeReport {
            entity: entity.clone(),
            encoded: records.len(),
            skipped: ids.len() - records.len(),
            d: model.d(),
            k: model.k(),
            zero_variance: model.encoder.zero_variance,
            has_dynamics: model.encoder.dynamics.is_some(),
            original_bytes: 0,
            stored_bytes_before: 0,
            stored_bytes_after: 0,
            model_bytes,
        };
        for (r, (offset, len)) in records.into_iter().zip(placed) {
            let id = r.sidecar.id.clone();
            if let Some(old) = index.get(&id) {
                report.stored_bytes_before += old.sidecar.stored_size;
            }
            report.original_bytes += r.sidecar.original_size;
            report.stored_bytes_after += r.sidecar.stored_size;
            index.insert(
                id,
                IndexEntry {
                    offset,
                    len,
                    sidecar: r.sidecar,
                },
            );
        }
        self.models.write().insert(entity, Arc::new(model));
        Ok(report)
    }
}

impl Drop for LtmStore {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

impl History for LtmStore {
    fn timestamps(&self, entity: &MemoryId) -> Vec<Time> {
        self.list_ids(entity, None)
            .iter()
            .filter_map(MemoryId::timestamp)
            .collect()
    }

    fn recall(&self, id: &MemoryId) -> Result<EntitySnapshot, String> {
        LtmStore::recall(self, id).map_err(|e| e.to_string())
    }
}

impl std::fmt::Debug for LtmStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LtmStore")
            .field("dir", &self.dir)
            .field("records", &self.index.read().len())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(t: i64, v: f64) -> EntitySnapshot {
        EntitySnapshot::new(
            Time(t),
            vec![DataObject::map([
                ("x", DataObject::Float64(v)),
                ("name", DataObject::string("cup")),
            ])],
            "P",
        )
    }

    fn id(t: i64) -> MemoryId {
        MemoryId::parse("M/C/P/E").unwrap().snapshot(Time(t))
    }

    fn opts() -> LtmOptions {
        LtmOptions {
            sync: false,
            ..Default::default()
        }
    }

    #[test]
    fn consolidate_recall_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = LtmStore::open(dir.path(), "M", opts()).unwrap();
            for t in 0..5 {
                store
                    .consolidate(&id(t), &snap(t, t as f64), None, &[], Time(100))
                    .unwrap();
            }
            assert_eq!(
                store.recall(&id(3)).unwrap().instances[0].data,
                snap(3, 3.0).instances[0].data
            );
        }
        let store = LtmStore::open(dir.path(), "M", opts()).unwrap();
        assert_eq!(store.list_ids(&MemoryId::parse("M").unwrap(), None).len(), 5);
        assert_eq!(store.decode_count(), 0);
        assert_eq!(store.recall(&id(4)).unwrap().tier, Tier::LtmOnline);
    }

    #[test]
    fn stale_index_is_rebuilt_from_log() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = LtmStore::open(dir.path(), "M", opts()).unwrap();
            store.consolidate(&id(1), &snap(1, 1.0), None, &[], Time(0)).unwrap();
            store.flush().unwrap();
            store.consolidate(&id(2), &snap(2, 2.0), None, &[], Time(0)).unwrap();
            std::mem::forget(store);
        }
        let store = LtmStore::open(dir.path(), "M", opts()).unwrap();
        assert!(store.exists(&id(1)) && store.exists(&id(2)));
    }

    #[test]
    fn torn_tail_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = LtmStore::open(dir.path(), "M", opts()).unwrap();
            store.consolidate(&id(1), &snap(1, 1.0), None, &[], Time(0)).unwrap();
        }
        let log = dir.path().join("M/C/records.log");
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(&[200, 0, 0, 0, 1, 2]).unwrap();
        fs::remove_file(dir.path().join("M/C/sidecar.idx")).unwrap();
        let store = LtmStore::open(dir.path(), "M", opts()).unwrap();
        assert_eq!(store.list_ids(&MemoryId::parse("M").unwrap(), None), vec![id(1)]);
        store.consolidate(&id(2), &snap(2, 2.0), None, &[], Time(0)).unwrap();
        assert!(store.recall(&id(2)).is_ok());
    }

    #[test]
    fn corrupted_record_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let store = LtmStore::open(dir.path(), "M", opts()).unwrap();
        store.consolidate(&id(1), &snap(1, 1.0), None, &[], Time(0)).unwrap();
        let log = dir.path().join("M/C/records.log");
        let mut bytes = fs::read(&log).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0xff;
        fs::write(&log, bytes).unwrap();
        match store.recall(&id(1)) {
            Err(LtmError::Integrity { record, .. }) => assert_eq!(record, id(1).to_string()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn filter_policy_applies_on_consolidate() {
        let dir = tempfile::tempdir().unwrap();
        let store = LtmStore::open(
            dir.path(),
            "M",
            LtmOptions {
                filter: FilterPolicy::new(5.0, 0.0),
                ..opts()
            },
        )
        .unwrap();
        let kept = (0..20)
            .filter(|&i| {
                let t = i * 50_000;
                store
                    .consolidate(&id(t), &snap(t, i as f64), None, &[], Time(0))
                    .unwrap()
                    .is_some()
            })
            .count();
        assert_eq!(kept, 5);
    }

    #[test]
    fn latent_tier_round_trip_keeps_strings() {
        let dir = tempfile::tempdir().unwrap();
        let store = LtmStore::open(dir.path(), "M", opts()).unwrap();
        for t in 0..6 {
            store
                .consolidate(&id(t), &snap(t, 2.0 * t as f64 + 1.0), None, &[], Time(0))
                .unwrap();
        }
        let report = store.encode_offline(&MemoryId::parse("M/C/P/E").unwrap()).unwrap();
        assert_eq!((report.encoded, report.k, report.d), (6, 1, 1));
        let s = store.recall(&id(4)).unwrap();
        assert_eq!(s.tier, Tier::LtmLatent);
        let x = s.instances[0].data.get("x").unwrap().as_f64().unwrap();
        assert!((x - 9.0).abs() < 1e-9);
        assert_eq!(s.instances[0].data.get("name").unwrap().as_str(), Some("cup"));
        drop(store);
        let store = LtmStore::open(dir.path(), "M", opts()).unwrap();
        assert_eq!(store.recall(&id(4)).unwrap().tier, Tier::LtmLatent);
        assert_eq!(store.stats().latent_records, 6);
    }

    #[test]
    fn forget_marks_model_stale_and_compacts() {
        let dir = tempfile::tempdir().unwrap();
        let store = LtmStore::open(dir.path(), "M", opts()).unwrap();
        for t in 0..6 {
            store
                .consolidate(&id(t), &snap(t, t as f64), None, &[], Time(0))
                .unwrap();
        }
        let entity = MemoryId::parse("M/C/P/E").unwrap();
        store.encode_offline(&entity).unwrap();
        let before = fs::metadata(dir.path().join("M/C/records.log")).unwrap().len();
        let f = ForgetFilter {
            range: Some((Time(0), Time(2))),
            ..ForgetFilter::prefix(entity.clone())
        };
        assert_eq!(store.forget(&f).unwrap(), 3);
        assert!(store.latent_model(&entity).unwrap().stale);
        assert!(fs::metadata(dir.path().join("M/C/records.log")).unwrap().len() < before);
        assert!(!store.exists(&id(1)));
        assert!(store.recall(&id(5)).is_ok());
        drop(store);
        let store = LtmStore::open(dir.path(), "M", opts()).unwrap();
        assert_eq!(store.list_ids(&entity, None), vec![id(3), id(4), id(5)]);
        assert!(store.latent_model(&entity).unwrap().stale);
    }

    #[test]
    fn mixed_layouts_leave_minority_online() {
        let dir = tempfile::tempdir().unwrap();
        let store = LtmStore::open(dir.path(), "M", opts()).unwrap();
        for t in 0..4 {
            store
                .consolidate(&id(t), &snap(t, t as f64), None, &[], Time(0))
                .unwrap();
        }
        let odd = EntitySnapshot::new(Time(9), vec![DataObject::Int32(4)], "P");
        store.consolidate(&id(9), &odd, None, &[], Time(0)).unwrap();
        let report = store.encode_offline(&MemoryId::parse("M/C/P/E").unwrap()).unwrap();
        assert_eq!((report.encoded, report.skipped), (4, 1));
        assert_eq!(
            store.recall(&id(9)).unwrap(),
            EntitySnapshot {
                tier: Tier::LtmOnline,
                ..odd
            }
        );
    }
}
