//! LTM record and sidecar types with their IDF representation.

use std::collections::BTreeMap;

use crate::idf::{DataObject, NdArray, Time};
use crate::layout::{Path, PathSeg};
use crate::model::{InstanceMetadata, MemoryId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LtmTier {
    Online,
    Latent,
}

impl LtmTier {
    pub fn name(self) -> &'static str {
        match self {
            LtmTier::Online => "online",
            LtmTier::Latent => "latent",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "online" => Some(LtmTier::Online),
            "latent" => Some(LtmTier::Latent),
            _ => None,
        }
    }
}

/// Compressed bytes tagged with the codec that produced them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    pub codec: String,
    pub bytes: Vec<u8>,
}

impl Blob {
    pub fn new(codec: &str, bytes: Vec<u8>) -> Self {
        Blob {
            codec: codec.to_owned(),
            bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub index: u32,
    pub metadata: InstanceMetadata,
    /// Encoded instance data with image arrays replaced by `Null`; absent on the latent tier.
    pub body: Option<Blob>,
    pub images: Vec<(Path, Blob)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SidecarMetadata {
    pub id: MemoryId,
    pub provider: String,
    pub tier: LtmTier,
    pub original_size: u64,
    pub stored_size: u64,
    pub committed_at: Option<Time>,
    pub consolidated_at: Time,
    /// Non-numeric values kept verbatim, keyed by path into the instance list.
    pub extracted: Vec<(Path, DataObject)>,
    pub links: Vec<MemoryId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtmRecord {
    pub instances: Vec<InstanceRecord>,
    /// Latent vector of the whole snapshot (latent tier only).
    pub latent: Option<Blob>,
    pub sidecar: SidecarMetadata,
}

impl LtmRecord {
    pub fn id(&self) -> &MemoryId {
        &self.sidecar.id
    }

    pub fn tier(&self) -> LtmTier {
        self.sidecar.tier
    }

    pub fn blob_bytes(&self) -> usize {
        let inst: usize = self
            .instances
            .iter()
            .map(|i| {
                i.body.as_ref().map_or(0, |b| b.bytes.len())
                    + i.images.iter().map(|(_, b)| b.bytes.len()).sum::<usize>()
            })
            .sum();
        inst + self.latent.as_ref().map_or(0, |b| b.bytes.len())
    }

    pub fn to_data(&self) -> DataObject {
        let mut m = BTreeMap::new();
        m.insert(
            "instances".to_owned(),
            DataObject::List(self.instances.iter().map(instance_to_data).collect()),
        );
        if let Some(l) = &self.latent {
            m.insert("latent".to_owned(), blob_to_data(l));
        }
        m.insert("sidecar".to_owned(), self.sidecar.to_data());
        DataObject::Map(m)
    }

    pub fn from_data(v: &DataObject) -> Result<Self, String> {
        let instances = field(v, "instances")?
            .as_list()
            .ok_or("instances is not a list")?
            .iter()
            .map(instance_from_data)
            .collect::<Result<_, _>>()?;
        let latent = v.get("latent").map(blob_from_data).transpose()?;
        let sidecar = SidecarMetadata::from_data(field(v, "sidecar")?)?;
        Ok(LtmRecord {
            instances,
            latent,
            sidecar,
        })
    }
}

impl SidecarMetadata {
    pub fn to_data(&self) -> DataObject {
        let mut m = BTreeMap::new();
        m.insert("id".to_owned(), DataObject::string(self.id.to_string()));
        m.insert("provider".to_owned(), DataObject::string(&self.provider));
        m.insert("tier".to_owned(), DataObject::string(self.tier.name()));
        m.insert("original_size".to_owned(), DataObject::Int64(self.original_size as i64));
        m.insert("stored_size".to_owned(), DataObject::Int64(self.stored_size as i64));
        if let Some(t) = self.committed_at {
            m.insert("committed_at".to_owned(), DataObject::Time(t));
        }
        m.insert("consolidated_at".to_owned(), DataObject::Time(self.consolidated_at));
        m.insert(
            "extracted".to_owned(),
            DataObject::List(
                self.extracted
                    .iter()
                    .map(|(p, v)| DataObject::map([("path", path_to_data(p)), ("value", v.clone())]))
                    .collect(),
            ),
        );
        m.insert(
            "links".to_owned(),
            DataObject::List(self.links.iter().map(|l| DataObject::string(l.to_string())).collect()),
        );
        DataObject::Map(m)
    }

    pub fn from_data(v: &DataObject) -> Result<Self, String> {
        let id = parse_id(field(v, "id")?)?;
        let tier = LtmTier::from_name(str_field(v, "tier")?).ok_or("unknown tier")?;
        let extracted = field(v, "extracted")?
            .as_list()
            .ok_or("extracted is not a list")?
            .iter()
            .map(|e| Ok((path_from_data(field(e, "path")?)?, field(e, "value")?.clone())))
            .collect::<Result<_, String>>()?;
        let links = field(v, "links")?
            .as_list()
            .ok_or("links is not a list")?
            .iter()
            .map(parse_id)
            .collect::<Result<_, _>>()?;
        Ok(SidecarMetadata {
            id,
            provider: str_field(v, "provider")?.to_owned(),
            tier,
            original_size: int_field(v, "original_size")? as u64,
            stored_size: int_field(v, "stored_size")? as u64,
            committed_at: v.get("committed_at").and_then(DataObject::as_time),
            consolidated_at: field(v, "consolidated_at")?
                .as_time()
                .ok_or("consolidated_at is not a time")?,
            extracted,
            links,
        })
    }
}

fn instance_to_data(i: &InstanceRecord) -> DataObject {
    let mut m = BTreeMap::new();
    m.insert("index".to_owned(), DataObject::Int64(i.index as i64));
    m.insert("metadata".to_owned(), metadata_to_data(&i.metadata));
    if let Some(b) = &i.body {
        m.insert("body".to_owned(), blob_to_data(b));
    }
    m.insert(
        "images".to_owned(),
        DataObject::List(
            i.images
                .iter()
                .map(|(p, b)| DataObject::map([("path", path_to_data(p)), ("blob", blob_to_data(b))]))
                .collect(),
        ),
    );
    DataObject::Map(m)
}

fn instance_from_data(v: &DataObject) -> Result<InstanceRecord, String> {
    let images = field(v, "images")?
        .as_list()
        .ok_or("images is not a list")?
        .iter()
        .map(|e| Ok((path_from_data(field(e, "path")?)?, blob_from_data(field(e, "blob")?)?)))
        .collect::<Result<_, String>>()?;
    Ok(InstanceRecord {
        index: u32::try_from(int_field(v, "index")?).map_err(|_| "bad instance index")?,
        metadata: metadata_from_data(field(v, "metadata")?)?,
        body: v.get("body").map(blob_from_data).transpose()?,
        images,
    })
}

fn blob_to_data(b: &Blob) -> DataObject {
    let bytes = NdArray::from_u8(vec![b.bytes.len() as u32], b.bytes.clone()).expect("1-d byte array");
    DataObject::map([
        ("codec", DataObject::string(&b.codec)),
        ("bytes", DataObject::NdArray(bytes)),
    ])
}

fn blob_from_data(v: &DataObject) -> Result<Blob, String> {
    let bytes = field(v, "bytes")?.as_ndarray().ok_or("blob bytes is not an array")?;
    Ok(Blob::new(str_field(v, "codec")?, bytes.bytes().to_vec()))
}

pub fn metadata_to_data(md: &InstanceMetadata) -> DataObject {
    let mut m = BTreeMap::new();
    m.insert("provider".to_owned(), DataObject::string(&md.provider));
    m.insert("payload_size".to_owned(), DataObject::Int64(md.payload_size as i64));
    if let Some(t) = md.produced_at {
        m.insert("produced_at".to_owned(), DataObject::Time(t));
    }
    if let Some(t) = md.committed_at {
        m.insert("committed_at".to_owned(), DataObject::Time(t));
    }
    if let Some(us) = md.transfer_us {
        m.insert("transfer_us".to_owned(), DataObject::Int64(us));
    }
    DataObject::Map(m)
}

pub fn metadata_from_data(v: &DataObject) -> Result<InstanceMetadata, String> {
    Ok(InstanceMetadata {
        provider: str_field(v, "provider")?.to_owned(),
        payload_size: int_field(v, "payload_size")? as u64,
        produced_at: v.get("produced_at").and_then(DataObject::as_time),
        committed_at: v.get("committed_at").and_then(DataObject::as_time),
        transfer_us: v.get("transfer_us").and_then(DataObject::as_i64),
    })
}

pub fn path_to_data(path: &[PathSeg]) -> DataObject {
    DataObject::List(
        path.iter()
            .map(|s| match s {
                PathSeg::Key(k) => DataObject::string(k),
                PathSeg::Index(i) => DataObject::Int64(*i as i64),
            })
            .collect(),
    )
}

pub fn path_from_data(v: &DataObject) -> Result<Path, String> {
    v.as_list()
        .ok_or("path is not a list")?
        .iter()
        .map(|s| match s {
            DataObject::String(k) => Ok(PathSeg::Key(k.clone())),
            DataObject::Int64(i) => u32::try_from(*i)
                .map(PathSeg::Index)
                .map_err(|_| "bad path index".to_owned()),
            _ => Err("bad path segment".to_owned()),
        })
        .collect()
}

pub(crate) fn field<'a>(v: &'a DataObject, key: &str) -> Result<&'a DataObject, String> {
    v.get(key).ok_or_else(|| format!("missing key {key:?}"))
}

pub(crate) fn str_field<'a>(v: &'a DataObject, key: &str) -> Result<&'a str, String> {
    field(v, key)?
        .as_str()
        .ok_or_else(|| format!("{key:?} is not a string"))
}

pub(crate) fn int_field(v: &DataObject, key: &str) -> Result<i64, String> {
    field(v, key)?
        .as_i64()
        .ok_or_else(|| format!("{key:?} is not an integer"))
}

fn parse_id(v: &DataObject) -> Result<MemoryId, String> {
    let s = v.as_str().ok_or("id is not a string")?;
    MemoryId::parse(s).map_err(|e| format!("bad id {s:?}: {e}"))
}
