//! Offline latent encoding: a linear spectral encoder with optional one-step dynamics.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use crate::idf::{DataObject, ElemKind, NdArray, Time};
use crate::layout::{Layout, Path, Slot, SlotKind};
use crate::ltm::record::{field, int_field, path_from_data, path_to_data, str_field};
use crate::model::MemoryId;

/// Any encode/decode/predict triple over flattened vectors.
pub trait LatentEncoder {
    fn input_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn encode(&self, x: &[f64]) -> Vec<f64>;
    fn decode(&self, z: &[f64]) -> Vec<f64>;
    /// One model step ahead in latent space; `None` without dynamics.
    fn predict_step(&self, z: &[f64]) -> Option<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentConfig {
    /// Fraction of total variance the basis must retain.
    pub variance: f64,
    pub k_max: usize,
    /// Overrides the variance rule.
    pub fixed_k: Option<usize>,
}

impl Default for LatentConfig {
    fn default() -> Self {
        LatentConfig {
            variance: 0.99,
            k_max: 64,
            fixed_k: None,
        }
    }
}

/// `x ≈ µ + B z`, with optional `z' = A z + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEncoder {
    pub mean: DVector<f64>,
    pub basis: DMatrix<f64>,
    pub dynamics: Option<(DMatrix<f64>, DVector<f64>)>,
    pub zero_variance: bool,
    /// Covariance eigenvalues in descending order.
    pub spectrum: Vec<f64>,
}

// Direct covariance eigendecomposition up to this dimension; Gram matrix above.
const COVARIANCE_DIM_LIMIT: usize = 512;
const RANK_RTOL: f64 = 1e-10;

impl LinearEncoder {
    /// Fits on `xs` (≥ 1 rows of equal length ≥ 1).
    pub fn fit(xs: &[Vec<f64>], cfg: &LatentConfig) -> Self {
        let n = xs.len();
        let d = xs[0].len();
        assert!(n >= 1 && d >= 1 && xs.iter().all(|x| x.len() == d));
        // Shifted mean: exact for constant columns.
        let mut mean = DVector::from_column_slice(&xs[0]);
        let mut acc = DVector::zeros(d);
        for x in xs {
            for j in 0..d {
                acc[j] += x[j] - xs[0][j];
            }
        }
        mean += acc / n as f64;
        let xc = DMatrix::from_fn(n, d, |i, j| xs[i][j] - mean[j]);
        let scale = xs.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));

        let denom = (n.max(2) - 1) as f64;
        let gram_mode = d > COVARIANCE_DIM_LIMIT && d > n;
        let (spectrum, vectors): (Vec<f64>, DMatrix<f64>) = if !gram_mode {
            let cov = (xc.transpose() * &xc) / denom;
            sorted_eigen(cov)
        } else {
            let gram = &xc * xc.transpose();
            let (mu, u) = sorted_eigen(gram);
            let mut v = xc.transpose() * u;
            for (j, m) in mu.iter().enumerate() {
                let norm = m.max(0.0).sqrt();
                if norm > 0.0 {
                    v.column_mut(j).scale_mut(1.0 / norm);
                }
            }
            (mu.into_iter().map(|m| m / denom).collect(), v)
        };
        let total: f64 = spectrum.iter().map(|l| l.max(0.0)).sum();
        let zero_variance = total.sqrt() <= 1e-12 * scale;
        let lmax = spectrum.first().copied().unwrap_or(0.0).max(0.0);
        let rank = spectrum.iter().filter(|&&l| l > lmax * RANK_RTOL && l > 0.0).count();

        let k = if zero_variance {
            1
        } else if let Some(k) = cfg.fixed_k {
            let usable = if gram_mode { rank.max(1) } else { d };
            k.clamp(1, usable)
        } else {
            let target = cfg.variance.min(1.0) * total * (1.0 - 1e-12);
            let mut cum = 0.0;
            let mut k = rank;
            for (i, l) in spectrum.iter().take(rank).enumerate() {
                cum += l.max(0.0);
                if cum >= target {
                    k = i + 1;
                    break;
                }
            }
            k.clamp(1, cfg.k_max.max(1)).min(rank.max(1))
        };

        let basis = if zero_variance {
            let mut b = DMatrix::zeros(d, 1);
            b[(0, 0)] = 1.0;
            b
        } else {
            orthonormalize(vectors.columns(0, k).into_owned())
        };
        let mut enc = LinearEncoder {
            mean,
            basis,
            dynamics: None,
            zero_variance,
            spectrum,
        };
        if n >= 3 {
            let zs: Vec<Vec<f64>> = xs.iter().map(|x| enc.encode(x)).collect();
            enc.dynamics = fit_dynamics(&zs);
        }
        enc
    }

    pub fn orthonormality_error(&self) -> f64 {
        let g = self.basis.transpose() * &self.basis;
        let k = g.nrows();
        (g - DMatrix::identity(k, k)).amax()
    }
}

impl LatentEncoder for LinearEncoder {
    fn input_dim(&self) -> usize {
        self.mean.len()
    }

    fn latent_dim(&self) -> usize {
        self.basis.ncols()
    }

    fn encode(&self, x: &[f64]) -> Vec<f64> {
        if self.zero_variance {
            return vec![0.0; self.latent_dim()];
        }
        let xc = DVector::from_column_slice(x) - &self.mean;
        (self.basis.transpose() * xc).as_slice().to_vec()
    }

    fn decode(&self, z: &[f64]) -> Vec<f64> {
        (&self.mean + &self.basis * DVector::from_column_slice(z))
            .as_slice()
            .to_vec()
    }

    fn predict_step(&self, z: &[f64]) -> Option<Vec<f64>> {
        let (a, b) = self.dynamics.as_ref()?;
        Some((a * DVector::from_column_slice(z) + b).as_slice().to_vec())
    }
}

fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Modified Gram-Schmidt, run twice for numerical orthogonality.
fn orthonormalize(mut b: DMatrix<f64>) -> DMatrix<f64> {
    for _ in 0..2 {
        for j in 0..b.ncols() {
            for i in 0..j {
                let proj = b.column(i).dot(&b.column(j));
                let ci = b.column(i).into_owned();
                b.column_mut(j).axpy(-proj, &ci, 1.0);
            }
            let norm = b.column(j).norm();
            if norm > 0.0 {
                b.column_mut(j).scale_mut(1.0 / norm);
            }
        }
    }
    b
}

/// Least squares on `z_{i+1} = A z_i + b`.
fn fit_dynamics(zs: &[Vec<f64>]) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let k = zs[0].len();
    let m = zs.len() - 1;
    let design = DMatrix::from_fn(m, k + 1, |i, j| if j < k { zs[i][j] } else { 1.0 });
    let target = DMatrix::from_fn(m, k, |i, j| zs[i + 1][j]);
    let w = design.svd(true, true).solve(&target, 1e-12).ok()?;
    let a = w.rows(0, k).transpose();
    let b = w.row(k).transpose();
    Some((a, b))
}

/// Per-entity trained model with the flattening it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentModel {
    pub entity: MemoryId,
    pub layout: Layout,
    pub opaque_lists: BTreeSet<Path>,
    pub encoder: LinearEncoder,
    /// Mean spacing between training snapshots; one dynamics step.
    pub step_us: i64,
    pub trained_from: Time,
    pub trained_to: Time,
    pub snapshot_count: usize,
    pub stale: bool,
}

impl LatentModel {
    pub fn k(&self) -> usize {
        self.encoder.latent_dim()
    }

    pub fn d(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn to_data(&self) -> DataObject {
        let e = &self.encoder;
        let k = self.k() as u32;
        let d = self.d() as u32;
        let mut m = BTreeMap::new();
        m.insert("entity".to_owned(), DataObject::string(self.entity.to_string()));
        m.insert("layout".to_owned(), layout_to_data(&self.layout));
        m.insert(
            "opaque_lists".to_owned(),
            DataObject::List(self.opaque_lists.iter().map(|p| path_to_data(p)).collect()),
        );
        m.insert("mean".to_owned(), f64_array(vec![d], e.mean.as_slice()));
        // Row-major d × k.
        m.insert(
            "basis".to_owned(),
            f64_array(vec![d, k], e.basis.transpose().as_slice()),
        );
        m.insert(
            "spectrum".to_owned(),
            f64_array(vec![e.spectrum.len() as u32], &e.spectrum),
        );
        if let Some((a, b)) = &e.dynamics {
            m.insert("dynamics".to_owned(), f64_array(vec![k, k], a.transpose().as_slice()));
            m.insert("bias".to_owned(), f64_array(vec![k], b.as_slice()));
        }
        m.insert("zero_variance".to_owned(), DataObject::Bool(e.zero_variance));
        m.insert("step_us".to_owned(), DataObject::Int64(self.step_us));
        m.insert("trained_from".to_owned(), DataObject::Time(self.trained_from));
        m.insert("trained_to".to_owned(), DataObject::Time(self.trained_to));
        m.insert(
            "snapshot_count".to_owned(),
            DataObject::Int64(self.snapshot_count as i64),
        );
        m.insert("stale".to_owned(), DataObject::Bool(self.stale));
        DataObject::Map(m)
    }

    pub fn from_data(v: &DataObject) -> Result<Self, String> {
        let entity = MemoryId::parse(str_field(v, "entity")?).map_err(|e| e.to_string())?;
        let layout = layout_from_data(field(v, "layout")?)?;
        let opaque_lists = field(v, "opaque_lists")?
            .as_list()
            .ok_or("opaque_lists is not a list")?
            .iter()
            .map(path_from_data)
            .collect::<Result<_, _>>()?;
        let (mean_dims, mean) = read_f64_array(field(v, "mean")?)?;
        let (basis_dims, basis) = read_f64_array(field(v, "basis")?)?;
        let (_, spectrum) = read_f64_array(field(v, "spectrum")?)?;
        let [d, k] = basis_dims[..] else {
            return Err("basis is not 2-d".into());
        };
        if mean_dims != [d] || layout.dim() != d as usize {
            return Err("model dimensions disagree".into());
        }
        let (d, k) = (d as usize, k as usize);
        let dynamics = match (v.get("dynamics"), v.get("bias")) {
            (Some(a), Some(b)) => {
                let (_, a) = read_f64_array(a)?;
                let (_, b) = read_f64_array(b)?;
                if a.len() != k * k || b.len() != k {
                    return Err("dynamics dimensions disagree".into());
                }
                Some((DMatrix::from_row_slice(k, k, &a), DVector::from_vec(b)))
            }
            _ => None,
        };
        let time = |key: &str| field(v, key)?.as_time().ok_or_else(|| format!("{key} is not a time"));
        Ok(LatentModel {
            entity,
            layout,
            opaque_lists,
            encoder: LinearEncoder {
                mean: DVector::from_vec(mean),
                basis: DMatrix::from_row_slice(d, k, &basis),
                dynamics,
                zero_variance: field(v, "zero_variance")?
                    .as_bool()
                    .ok_or("zero_variance is not a bool")?,
                spectrum,
            },
            step_us: int_field(v, "step_us")?,
            trained_from: time("trained_from")?,
            trained_to: time("trained_to")?,
            snapshot_count: int_field(v, "snapshot_count")? as usize,
            stale: field(v, "stale")?.as_bool().ok_or("stale is not a bool")?,
        })
    }
}

fn f64_array(dims: Vec<u32>, values: &[f64]) -> DataObject {
    DataObject::NdArray(NdArray::from_f64(dims, values).expect("dims match values"))
}

fn read_f64_array(v: &DataObject) -> Result<(Vec<u32>, Vec<f64>), String> {
    let a = v.as_ndarray().ok_or("expected an array")?;
    if a.kind() != ElemKind::F64 {
        return Err("expected an f64 array".into());
    }
    Ok((a.dims().to_vec(), a.to_f64_vec()))
}

fn slot_kind_name(k: SlotKind) -> String {
    match k {
        SlotKind::Int32 => "int32".into(),
        SlotKind::Int64 => "int64".into(),
        SlotKind::Float32 => "float32".into(),
        SlotKind::Float64 => "float64".into(),
        SlotKind::Array(e) => format!("array-{}", e.name()),
    }
}

fn slot_kind_from_name(s: &str) -> Option<SlotKind> {
    Some(match s {
        "int32" => SlotKind::Int32,
        "int64" => SlotKind::Int64,
        "float32" => SlotKind::Float32,
        "float64" => SlotKind::Float64,
        _ => SlotKind::Array(ElemKind::from_name(s.strip_prefix("array-")?)?),
    })
}

pub fn layout_to_data(layout: &Layout) -> DataObject {
    DataObject::List(
        layout
            .slots
            .iter()
            .map(|s| {
                DataObject::map([
                    ("path", path_to_data(&s.path)),
                    ("kind", DataObject::string(slot_kind_name(s.kind))),
                    (
                        "dims",
                        DataObject::List(s.dims.iter().map(|&d| DataObject::Int64(d as i64)).collect()),
                    ),
                ])
            })
            .collect(),
    )
}

pub fn layout_from_data(v: &DataObject) -> Result<Layout, String> {
    let slots = v
        .as_list()
        .ok_or("layout is not a list")?
        .iter()
        .map(|s| {
            let kind = slot_kind_from_name(str_field(s, "kind")?).ok_or("unknown slot kind")?;
            let dims = field(s, "dims")?
                .as_list()
                .ok_or("dims is not a list")?
                .iter()
                .map(|d| d.as_i64().and_then(|d| u32::try_from(d).ok()).ok_or("bad dim"))
                .collect::<Result<_, _>>()?;
            Ok(Slot {
                path: path_from_data(field(s, "path")?)?,
                kind,
                dims,
            })
        })
        .collect::<Result<_, String>>()?;
    Ok(Layout { slots })
}
