//! Synthetic robot recording and the long-term compression benchmark.

use epimem_core::idf::{Field, LeafKind, TypeKind, TypeObject};
use epimem_core::ltm::{FilterPolicy, LtmOptions, LtmStore};
use epimem_core::model::EntitySnapshot;
use epimem_core::{DataObject, ElemKind, MemoryId, NdArray, Time};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::CsvRow;

const MEMORY: &str = "Robot";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordingSpec {
    pub seconds: f64,
    pub width: u32,
    pub height: u32,
    pub image_hz: f64,
    pub joint_hz: f64,
    pub dof: usize,
    /// Number of independent motion components driving the joints.
    pub motion_rank: usize,
    pub filter_hz: f64,
    pub seed: u64,
}

impl Default for RecordingSpec {
    fn default() -> Self {
        RecordingSpec {
            seconds: 10.0,
            width: 640,
            height: 480,
            image_hz: 20.0,
            joint_hz: 100.0,
            dof: 43,
            motion_rank: 3,
            filter_hz: 5.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionReport {
    pub seconds: f64,
    pub raw_bytes: u64,
    pub online_bytes: u64,
    /// Stored size with the low-rank streams moved to the latent tier.
    pub latent_bytes: u64,
    /// Online and latent bytes of the low-rank joint stream.
    pub low_rank_online_bytes: u64,
    pub low_rank_latent_bytes: u64,
    pub image_frames: usize,
    pub image_frames_kept: usize,
    pub latent_dims: Vec<(String, usize)>,
}

impl CompressionReport {
    pub fn raw_mb_s(&self) -> f64 {
        self.raw_bytes as f64 / 1e6 / self.seconds
    }

    pub fn online_mb_s(&self) -> f64 {
        self.online_bytes as f64 / 1e6 / self.seconds
    }

    pub fn latent_mb_s(&self) -> f64 {
        self.latent_bytes as f64 / 1e6 / self.seconds
    }

    pub fn online_reduction(&self) -> f64 {
        1.0 - self.online_bytes as f64 / self.raw_bytes as f64
    }

    /// Reduction of the latent tier relative to the online tier, on the encoded streams.
    pub fn latent_reduction(&self) -> f64 {
        1.0 - self.low_rank_latent_bytes as f64 / self.low_rank_online_bytes as f64
    }

    pub fn keep_ratio(&self) -> f64 {
        self.image_frames_kept as f64 / self.image_frames as f64
    }

    /// CSV rows; the metric value goes into `mean_us`.
    pub fn rows(&self) -> Vec<CsvRow> {
        let row = |phase: &str, v: f64| CsvRow {
            scenario: "compression".into(),
            payload: "recording".into(),
            batch: 0,
            samples: self.image_frames,
            phase: phase.into(),
            mean_us: v,
            var_us: 0.0,
            errors: 0,
            drops: 0,
        };
        vec![
            row("raw_mb_per_s", self.raw_mb_s()),
            row("online_mb_per_s", self.online_mb_s()),
            row("latent_mb_per_s", self.latent_mb_s()),
            row("online_reduction", self.online_reduction()),
            row("latent_reduction", self.latent_reduction()),
            row("image_keep_ratio", self.keep_ratio()),
        ]
    }
}

fn image_type(w: u32, h: u32) -> TypeObject {
    let img = TypeObject::new(TypeKind::Image {
        height: h,
        width: w,
        channels: 3,
        pixel: ElemKind::U8,
    });
    TypeObject::object(
        "StereoFrame",
        vec![
            Field {
                name: "left".into(),
                ty: img.clone(),
                optional: false,
            },
            Field {
                name: "right".into(),
                ty: img,
                optional: false,
            },
            Field {
                name: "exposure".into(),
                ty: TypeObject::leaf(LeafKind::Float),
                optional: true,
            },
        ],
    )
}

/// A smooth scene: a vertical colour gradient and a moving disc, seen by a
/// camera shifted `disparity` pixels to the side.
fn render(w: u32, h: u32, t: f64, disparity: i64, seed_phase: f64) -> NdArray {
    let (w, h) = (w as i64, h as i64);
    let cx = w as f64 * (0.5 + 0.3 * (0.7 * t + seed_phase).sin()) - disparity as f64;
    let cy = h as f64 * (0.5 + 0.2 * (0.45 * t).cos());
    let r2 = (h as f64 / 8.0).powi(2);
    let mut px = Vec::with_capacity((w * h * 3) as usize);
    for y in 0..h {
        let sky = (255 * y / h) as u8;
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            if dx * dx + dy * dy < r2 {
                px.extend([200, 40, 40]);
            } else {
                px.extend([sky / 2, sky, 255 - sky / 3]);
            }
        }
    }
    NdArray::from_u8(vec![h as u32, w as u32, 3], px).expect("image dims")
}

fn snapshot(t_us: i64, data: DataObject, provider: &str) -> EntitySnapshot {
    EntitySnapshot::new(Time(t_us), vec![data], provider)
}

fn arr(v: &[f64]) -> DataObject {
    DataObject::NdArray(NdArray::from_f64(vec![v.len() as u32], v).expect("1-d"))
}

/// Generates the recording, consolidates it through the filter and online
/// compression, then encodes the low-rank streams offline.
pub fn run_compression_bench(spec: &RecordingSpec) -> Result<CompressionReport, epimem_core::error::LtmError> {
    let dir = tempfile::tempdir()?;
    let store = LtmStore::open(
        dir.path(),
        MEMORY,
        LtmOptions {
            sync: false,
            filter: FilterPolicy::new(spec.filter_hz, 0.0),
            ..Default::default()
        },
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let camera = MemoryId::entity_id(MEMORY, "Vision", "stereo", "camera").expect("static id");
    let joints = MemoryId::entity_id(MEMORY, "Proprioception", "kinematics", "joints").expect("static id");
    let pose = MemoryId::entity_id(MEMORY, "Proprioception", "localizer", "pose").expect("static id");
    let action = MemoryId::entity_id(MEMORY, "Symbolic", "planner", "action").expect("static id");
    let ty = image_type(spec.width, spec.height);
    let now = Time(0);
    let mut raw = 0u64;

    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let n_images = (spec.seconds * spec.image_hz).round() as usize;
    let mut kept = 0;
    for i in 0..n_images {
        let t = i as f64 / spec.image_hz;
        let data = DataObject::map([
            (
                "left",
                DataObject::NdArray(render(spec.width, spec.height, t, 0, phase)),
            ),
            (
                "right",
                DataObject::NdArray(render(spec.width, spec.height, t, 12, phase)),
            ),
            ("exposure", DataObject::Float32(0.01)),
        ]);
        let s = snapshot((t * 1e6).round() as i64, data, "stereo");
        raw += s.payload_size() as u64;
        if store
            .consolidate(&camera.snapshot(s.timestamp), &s, Some(&ty), &[], now)?
            .is_some()
        {
            kept += 1;
        }
    }

    // Joint trajectories: mean posture plus a few shared sinusoidal synergies.
    let mean: Vec<f64> = (0..spec.dof).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let basis: Vec<Vec<f64>> = (0..spec.motion_rank)
        .map(|_| (0..spec.dof).map(|_| rng.gen_range(-0.5..0.5)).collect())
        .collect();
    let freqs: Vec<f64> = (0..spec.motion_rank).map(|_| rng.gen_range(0.2..1.5)).collect();
    let n_joint = (spec.seconds * spec.joint_hz).round() as usize;
    for i in 0..n_joint {
        let t = i as f64 / spec.joint_hz;
        let mut pos = mean.clone();
        let mut vel = vec![0.0; spec.dof];
        for ((b, w), k) in basis.iter().zip(&freqs).zip(0..) {
            let (s, c) = (w * t + k as f64).sin_cos();
            for j in 0..spec.dof {
                pos[j] += b[j] * s;
                vel[j] += b[j] * w * c;
            }
        }
        let t_us = (t * 1e6).round() as i64;
        let js = snapshot(
            t_us,
            DataObject::map([("position", arr(&pos)), ("velocity", arr(&vel))]),
            "kinematics",
        );
        let ps = snapshot(
            t_us,
            DataObject::map([
                ("x", DataObject::Float64(1.0 + 0.1 * t)),
                ("y", DataObject::Float64(0.5 * (0.3 * t).sin())),
                ("yaw", DataObject::Float64(0.05 * t)),
            ]),
            "localizer",
        );
        for (id, s) in [(&joints, js), (&pose, ps)] {
            raw += s.payload_size() as u64;
            store.consolidate(&id.snapshot(s.timestamp), &s, None, &[], now)?;
        }
    }

    let labels = ["grasp", "lift", "move", "place", "release", "idle"];
    for i in 0..(spec.seconds * 2.0).round() as usize {
        let s = snapshot(
            i as i64 * 500_000,
            DataObject::map([
                ("label", DataObject::string(labels[(i / 3) % labels.len()])),
                ("step", DataObject::Int64(i as i64)),
            ]),
            "planner",
        );
        raw += s.payload_size() as u64;
        store.consolidate(&action.snapshot(s.timestamp), &s, None, &[], now)?;
    }
    store.flush()?;

    let online = store.stats().stored_bytes;
    let mut dims = Vec::new();
    let j = store.encode_offline(&joints)?;
    dims.push((joints.to_string(), j.k));
    let p = store.encode_offline(&pose)?;
    dims.push((pose.to_string(), p.k));
    let saved = (j.stored_bytes_before + p.stored_bytes_before) - (j.stored_bytes_after + p.stored_bytes_after);
    Ok(CompressionReport {
        seconds: spec.seconds,
        raw_bytes: raw,
        online_bytes: online,
        latent_bytes: online - saved,
        low_rank_online_bytes: j.stored_bytes_before,
        low_rank_latent_bytes: j.stored_bytes_after,
        image_frames: n_images,
        image_frames_kept: kept,
        latent_dims: dims,
    })
}
