use epimem_core::model::{Commit, EntityUpdate};
use epimem_core::predict::{predict, PredictConfig, PredictionRequest, Source};
use epimem_core::{DataObject, Memory, MemoryId, Time};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const AFFINE_CASES: usize = 500;
const AFFINE_TOLERANCE: f64 = 1e-9;
const NOISY_TRIALS: usize = 100;
const NOISE_SIGMA: f64 = 0.3;

fn normal(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn entity() -> MemoryId {
    MemoryId::entity_id("M", "C", "P", "obj").unwrap()
}

fn memory_from(samples: &[(i64, Vec<f64>)]) -> Memory {
    let mut m = Memory::new("M");
    m.declare_core_segment("C", None);
    for (t, xs) in samples {
        let data = DataObject::map([(
            "v",
            DataObject::List(xs.iter().map(|x| DataObject::Float64(*x)).collect()),
        )]);
        m.apply_commit(
            &Commit::single(EntityUpdate::new(entity(), Time(*t), vec![data])),
            Time(0),
        );
    }
    m
}

fn predicted(m: &Memory, at: i64) -> Result<Vec<f64>, String> {
    let request = PredictionRequest {
        entity: entity(),
        at: Time(at),
        source: Source::Wm,
    };
    let r = predict(m, None, &request, &PredictConfig::default()).map_err(|e| e.to_string())?;
    let v = r.snapshot.instances[0]
        .data
        .get("v")
        .and_then(DataObject::as_list)
        .ok_or("no v in prediction")?;
    v.iter()
        .map(|x| x.as_f64().ok_or_else(|| "non-numeric leaf".to_string()))
        .collect()
}

fn affine() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0009);
    let mut worst = 0.0f64;
    for _ in 0..AFFINE_CASES {
        let d = rng.gen_range(1..8);
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-1e2..1e2)).collect();
        let f = |t: i64| -> Vec<f64> { (0..d).map(|j| a[j] + b[j] * t as f64 * 1e-6).collect() };
        let mut t = rng.gen_range(0..10_000_000i64);
        let mut samples = Vec::new();
        for _ in 0..rng.gen_range(2..9) {
            samples.push((t, f(t)));
            t += rng.gen_range(1_000..2_000_000);
        }
        let at = t + rng.gen_range(0..5_000_000);
        for (g, e) in predicted(&memory_from(&samples), at)?.iter().zip(f(at)) {
            worst = worst.max((g - e).abs() / e.abs().max(1.0));
        }
    }
    Ok(worst)
}

/// Mean squared error of one-step and two-step predictions on a noisy constant-velocity walk.
fn horizon() -> Result<(f64, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0109);
    let step = 100_000i64;
    let (mut e1, mut e2) = (0.0, 0.0);
    let sq = |p: &[f64], t: &[f64]| p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    for _ in 0..NOISY_TRIALS {
        let d = 4;
        let mut x: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut truth = Vec::new();
        for i in 0..7 {
            truth.push((i * step, x.clone()));
            for j in 0..d {
                x[j] += v[j] + normal(&mut rng, NOISE_SIGMA);
            }
        }
        let m = memory_from(&truth[..5]);
        e1 += sq(&predicted(&m, 5 * step)?, &truth[5].1);
        e2 += sq(&predicted(&m, 6 * step)?, &truth[6].1);
    }
    let n = NOISY_TRIALS as f64;
    Ok((e1 / n, e2 / n))
}

pub fn run() -> Outcome {
    let worst = affine()?;
    ensure!(
        worst <= AFFINE_TOLERANCE,
        "affine relative error {worst:e} > {AFFINE_TOLERANCE:e}"
    );
    let (one, two) = horizon()?;
    ensure!(two >= one, "two-step error {two:.4} below one-step {one:.4}");
    Ok(format!(
        "affine worst relative error {worst:.1e} over {AFFINE_CASES} signals; mean sq error 1-step {one:.3}, 2-step {two:.3} over {NOISY_TRIALS} trials"
    ))
}
