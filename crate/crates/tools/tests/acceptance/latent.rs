use epimem_core::ltm::{LatentConfig, LatentEncoder, LinearEncoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const DIM: usize = 100;
const RANKS: [usize; 3] = [1, 5, 20];
const SAMPLES: usize = 200;
const LEAF_TOLERANCE: f64 = 1e-6;
/// Relative slack for floating-point noise when comparing successive MSE values.
const MSE_SLACK: f64 = 1e-9;

/// `n` samples from a random rank-`r` affine subspace of R^d.
fn low_rank(rng: &mut ChaCha8Rng, n: usize, d: usize, r: usize) -> Vec<Vec<f64>> {
    let mu: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let basis: Vec<Vec<f64>> = (0..r)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..r).map(|_| rng.gen_range(-10.0..10.0)).collect();
            (0..d)
                .map(|j| mu[j] + (0..r).map(|i| basis[i][j] * z[i]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn fit(xs: &[Vec<f64>], k: usize) -> LinearEncoder {
    LinearEncoder::fit(
        xs,
        &LatentConfig {
            fixed_k: Some(k),
            ..Default::default()
        },
    )
}

fn residuals(enc: &LinearEncoder, xs: &[Vec<f64>]) -> (f64, f64) {
    let (mut worst, mut sq) = (0.0f64, 0.0);
    for x in xs {
        let y = enc.decode(&enc.encode(x));
        for (a, b) in x.iter().zip(&y) {
            worst = worst.max((a - b).abs());
            sq += (a - b).powi(2);
        }
    }
    (worst, sq / (xs.len() * xs[0].len()) as f64)
}

fn non_increasing(mses: &[f64]) -> Option<usize> {
    mses.windows(2).position(|w| w[1] > w[0] * (1.0 + MSE_SLACK) + 1e-15)
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0008);
    let mut worst_all = 0.0f64;
    for r in RANKS {
        let xs = low_rank(&mut rng, SAMPLES, DIM, r);
        let mut mses = Vec::new();
        for k in 1..=r + 5 {
            let (worst, mse) = residuals(&fit(&xs, k), &xs);
            if k >= r {
                ensure!(worst <= LEAF_TOLERANCE, "r={r} k={k}: worst leaf error {worst:e}");
                worst_all = worst_all.max(worst);
            }
            mses.push(mse);
        }
        if let Some(i) = non_increasing(&mses) {
            return Err(format!(
                "r={r}: MSE rose from k={} to k={}: {:?}",
                i + 1,
                i + 2,
                &mses[i..i + 2]
            ));
        }

        let mut noisy = xs.clone();
        for x in &mut noisy {
            for v in x.iter_mut() {
                *v += rng.gen_range(-0.01..0.01);
            }
        }
        let mses: Vec<f64> = (1..=r + 10).map(|k| residuals(&fit(&noisy, k), &noisy).1).collect();
        if let Some(i) = non_increasing(&mses) {
            return Err(format!("noisy r={r}: MSE rose from k={} to k={}", i + 1, i + 2));
        }
    }
    Ok(format!("d={DIM}, r in {RANKS:?}: worst leaf error {worst_all:.1e} at k>=r (tol {LEAF_TOLERANCE:e}); MSE non-increasing in k"))
}
