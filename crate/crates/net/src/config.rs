//! Server configuration: TOML key-value file plus the `EPIMEM_MNS` override.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::NetError;

pub const MNS_ENV: &str = "EPIMEM_MNS";
pub const DEFAULT_MNS: &str = "127.0.0.1:7300";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub memory_name: String,
    /// `host:port`; port 0 picks a free port.
    pub listen: String,
    /// Core segment declarations: `"Name"` or `"Name:SchemaType"`.
    pub core_segments: Vec<String>,
    /// XML schema providing the named segment types.
    pub schema: Option<PathBuf>,
    pub wm_max_bytes: u64,
    pub wm_max_snapshots_per_entity: usize,
    /// Queries within the hot window that make an entity hot.
    pub hot_queries: usize,
    pub hot_window_s: f64,
    pub ltm_root: PathBuf,
    pub ltm_sync: bool,
    /// Admission filter applied on consolidation; unset keeps everything.
    pub ltm_max_hz: Option<f64>,
    pub ltm_similarity_epsilon: f64,
    pub subscriber_queue: usize,
    /// Name service endpoint; `None` runs without registration.
    pub mns: Option<String>,
    pub heartbeat_s: f64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            memory_name: "Memory".into(),
            listen: "127.0.0.1:0".into(),
            core_segments: Vec::new(),
            schema: None,
            wm_max_bytes: 256 * 1024 * 1024,
            wm_max_snapshots_per_entity: 10_000,
            hot_queries: 3,
            hot_window_s: 30.0,
            ltm_root: PathBuf::from("ltm"),
            ltm_sync: true,
            ltm_max_hz: None,
            ltm_similarity_epsilon: 0.0,
            subscriber_queue: 1024,
            mns: None,
            heartbeat_s: 5.0,
        }
    }
}

/// One declared core segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreDecl {
    pub name: String,
    pub type_name: Option<String>,
}

impl ServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, NetError> {
        let cfg: ServerConfig = toml::from_str(text).map_err(|e| NetError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies the environment override.
    pub fn load(path: &Path) -> Result<Self, NetError> {
        let text = std::fs::read_to_string(path).map_err(|e| NetError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            if cfg.ltm_root.is_relative() {
                cfg.ltm_root = dir.join(&cfg.ltm_root);
            }
            if let Some(s) = cfg.schema.as_mut().filter(|s| s.is_relative()) {
                *s = dir.join(&*s);
            }
        }
        cfg.apply_mns_override(std::env::var(MNS_ENV).ok());
        Ok(cfg)
    }

    pub fn apply_mns_override(&mut self, value: Option<String>) {
        if let Some(v) = value.filter(|v| !v.is_empty()) {
            self.mns = Some(v);
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let err = |m: &str| Err(NetError::Config(m.to_owned()));
        if self.memory_name.is_empty() || self.memory_name.contains('/') {
            return err("memory_name must be a non-empty name without '/'");
        }
        if self.wm_max_bytes == 0 {
            return err("wm_max_bytes must be > 0");
        }
        if self.wm_max_snapshots_per_entity == 0 {
            return err("wm_max_snapshots_per_entity must be >= 1");
        }
        if self.subscriber_queue == 0 {
            return err("subscriber_queue must be >= 1");
        }
        if self.ltm_max_hz.is_some_and(|h| h.is_nan() || h <= 0.0) {
            return err("ltm_max_hz must be > 0");
        }
        for d in self.cores() {
            if d.name.is_empty() || d.name.contains('/') {
                return err("core segment names must be non-empty without '/'");
            }
        }
        Ok(())
    }

    pub fn cores(&self) -> Vec<CoreDecl> {
        self.core_segments
            .iter()
            .map(|s| match s.split_once(':') {
                Some((n, t)) => CoreDecl {
                    name: n.trim().to_owned(),
                    type_name: Some(t.trim().to_owned()),
                },
                None => CoreDecl {
                    name: s.trim().to_owned(),
                    type_name: None,
                },
            })
            .collect()
    }
}
