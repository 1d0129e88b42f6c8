//! Future-timestamp prediction from WM history (per-leaf least squares) or
//! from an entity's latent dynamics model.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::PredictError;
use crate::idf::{DataObject, Time};
use crate::layout::{compose, decompose, flatten, Layout};
use crate::ltm::{LatentEncoder, LatentModel};
use crate::model::{Entity, EntityInstance, EntitySnapshot, InstanceMetadata, Memory, MemoryId, Tier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Source {
    #[default]
    Auto,
    Wm,
    Ltm,
}

impl Source {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "auto" => Some(Source::Auto),
            "wm" => Some(Source::Wm),
            "ltm" => Some(Source::Ltm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    WmLinear,
    LtmLatent,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::WmLinear => "wm-linear",
            Method::LtmLatent => "ltm-latent",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRequest {
    pub entity: MemoryId,
    pub at: Time,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    /// Synthetic snapshot at the requested time.
    pub snapshot: EntitySnapshot,
    pub method: Method,
    pub basis_count: usize,
    pub horizon_us: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictConfig {
    /// WM snapshots fitted by the linear extrapolator; at least 2.
    pub k_basis: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig { k_basis: 5 }
    }
}

/// Predicts `req.entity` at `req.at` without mutating `memory`.
pub fn predict(
    memory: &Memory,
    model: Option<&LatentModel>,
    req: &PredictionRequest,
    cfg: &PredictConfig,
) -> Result<PredictionResult, PredictError> {
    let entity = memory
        .entity(&req.entity)
        .ok_or_else(|| PredictError::UnknownEntity(req.entity.to_string()))?;
    let latest = entity
        .latest()
        .ok_or_else(|| PredictError::InsufficientData(req.entity.to_string()))?;
    if req.at <= latest.timestamp {
        return Err(PredictError::NotFuture {
            requested: req.at,
            latest: latest.timestamp,
        });
    }
    let k_basis = cfg.k_basis.max(2);
    let basis = wm_basis(entity, k_basis);
    let insufficient = || PredictError::InsufficientData(req.entity.to_string());
    let usable_model = model.filter(|m| m.encoder.dynamics.is_some());

    match req.source {
        Source::Wm => wm_linear(latest, &basis, req.at).ok_or_else(insufficient),
        Source::Ltm => {
            let m = usable_model.ok_or_else(insufficient)?;
            if m.stale {
                return Err(PredictError::StaleModel(req.entity.to_string()));
            }
            ltm_latent(latest, m, req.at).ok_or_else(insufficient)
        }
        Source::Auto => {
            if basis.len() >= k_basis {
                if let Some(r) = wm_linear(latest, &basis, req.at) {
                    return Ok(r);
                }
            }
            if let Some(m) = usable_model.filter(|m| !m.stale) {
                if let Some(r) = ltm_latent(latest, m, req.at) {
                    return Ok(r);
                }
            }
            if let Some(r) = wm_linear(latest, &basis, req.at) {
                return Ok(r);
            }
            match usable_model {
                Some(m) if m.stale => Err(PredictError::StaleModel(req.entity.to_string())),
                _ => Err(insufficient()),
            }
        }
    }
}

/// The most recent (≤ k) WM snapshots sharing the latest snapshot's layout, oldest first.
fn wm_basis(entity: &Entity, k: usize) -> Vec<(Time, Vec<f64>)> {
    let mut out = Vec::new();
    let mut layout: Option<Layout> = None;
    for (t, s) in entity.timeline.iter().rev() {
        let (l, x) = flatten(&snapshot_value(s));
        match &layout {
            None => layout = Some(l),
            Some(first) if *first != l => continue,
            _ => {}
        }
        out.push((*t, x));
        if out.len() == k {
            break;
        }
    }
    out.reverse();
    out
}

fn snapshot_value(s: &EntitySnapshot) -> DataObject {
    DataObject::List(s.data().cloned().collect())
}

/// Per-leaf ordinary least squares over (time, value), evaluated at `at`.
pub fn linear_extrapolate(basis: &[(Time, Vec<f64>)], at: Time) -> Vec<f64> {
    let n = basis.len() as f64;
    let anchor = basis.last().expect("non-empty basis").0;
    // Times in seconds relative to the newest sample, then centered.
    let ts: Vec<f64> = basis.iter().map(|(t, _)| (t.0 - anchor.0) as f64 * 1e-6).collect();
    let t_mean = ts.iter().sum::<f64>() / n;
    let sxx: f64 = ts.iter().map(|t| (t - t_mean).powi(2)).sum();
    let tf = (at.0 - anchor.0) as f64 * 1e-6 - t_mean;
    let d = basis[0].1.len();
    let last = &basis.last().unwrap().1;
    (0..d)
        .map(|j| {
            // Shifted mean keeps constant leaves exact.
            let mean = last[j] + basis.iter().map(|(_, x)| x[j] - last[j]).sum::<f64>() / n;
            let sxy: f64 = ts
                .iter()
                .zip(basis)
                .map(|(t, (_, x))| (t - t_mean) * (x[j] - mean))
                .sum();
            if sxx == 0.0 || sxy == 0.0 {
                mean
            } else {
                mean + sxy / sxx * tf
            }
        })
        .collect()
}

fn wm_linear(latest: &EntitySnapshot, basis: &[(Time, Vec<f64>)], at: Time) -> Option<PredictionResult> {
    if basis.len() < 2 || basis[0].1.is_empty() {
        return None;
    }
    let x = linear_extrapolate(basis, at);
    let d = decompose(&snapshot_value(latest), &BTreeSet::new());
    Some(PredictionResult {
        snapshot: synthetic(latest, at, compose(&d.layout, &x, &d.extracted))?,
        method: Method::WmLinear,
        basis_count: basis.len(),
        horizon_us: at.0 - latest.timestamp.0,
    })
}

fn ltm_latent(latest: &EntitySnapshot, model: &LatentModel, at: Time) -> Option<PredictionResult> {
    let d = decompose(&snapshot_value(latest), &model.opaque_lists);
    if d.layout != model.layout {
        return None;
    }
    let steps = (at.0 - latest.timestamp.0) / model.step_us.max(1);
    let mut z = model.encoder.encode(&d.values);
    for _ in 0..steps {
        z = model.encoder.predict_step(&z)?;
    }
    let x = model.encoder.decode(&z);
    Some(PredictionResult {
        snapshot: synthetic(latest, at, compose(&model.layout, &x, &d.extracted))?,
        method: Method::LtmLatent,
        basis_count: model.snapshot_count,
        horizon_us: steps * model.step_us,
    })
}

fn synthetic(latest: &EntitySnapshot, at: Time, value: DataObject) -> Option<EntitySnapshot> {
    let DataObject::List(items) = value else { return None };
    let instances = latest
        .instances
        .iter()
        .zip(items)
        .map(|(inst, data)| EntityInstance {
            index: inst.index,
            metadata: InstanceMetadata {
                provider: inst.metadata.provider.clone(),
                payload_size: data.payload_size() as u64,
                ..Default::default()
            },
            data,
        })
        .collect();
    Some(EntitySnapshot {
        timestamp: at,
        instances,
        tier: Tier::Synthetic,
    })
}
