use epimem_tools::recording::{run_compression_bench, RecordingSpec};

use crate::Outcome;

const MIN_ONLINE_REDUCTION: f64 = 0.95;
const MIN_LATENT_REDUCTION: f64 = 0.90;
const KEEP_RATIO: f64 = 0.25;

pub fn run() -> Outcome {
    let spec = RecordingSpec::default();
    ensure!(
        spec.image_hz == 20.0 && spec.filter_hz == 5.0,
        "unexpected recording rates"
    );
    let r = run_compression_bench(&spec).map_err(|e| e.to_string())?;
    let online = r.online_reduction();
    let latent = r.latent_reduction();
    let keep = r.keep_ratio();
    let slack = 1.0 / r.image_frames as f64;
    ensure!(
        online >= MIN_ONLINE_REDUCTION,
        "online reduction {online:.4} < {MIN_ONLINE_REDUCTION}"
    );
    ensure!(
        latent >= MIN_LATENT_REDUCTION,
        "latent reduction {latent:.4} < {MIN_LATENT_REDUCTION}"
    );
    ensure!(
        (keep - KEEP_RATIO).abs() <= slack,
        "keep ratio {keep:.4} outside {KEEP_RATIO} +/- {slack:.4}"
    );
    Ok(format!(
        "online reduction {:.2}% ({:.1} -> {:.3} MB/s), latent reduction {:.2}%, keep ratio {keep:.4} ({}/{} frames)",
        online * 100.0,
        r.raw_mb_s(),
        r.online_mb_s(),
        latent * 100.0,
        r.image_frames_kept,
        r.image_frames
    ))
}
