//! Speedup over target-only decoding as batch size grows.

use std::sync::Arc;

use mirror_sd::config::DecodeConfig;
use mirror_sd::dist::tokens;
use mirror_sd::models::{AlignedDraft, DraftLm, LayeredLm, SyntheticLayeredLm};
use mirror_sd::sim::{sweep_batching, Models, Setup};
use mirror_sd::timing::{BatchScaling, LatencyParams};

fn main() -> mirror_sd::Result<()> {
    let target: Arc<dyn LayeredLm> = Arc::new(SyntheticLayeredLm::new(8, 32, 0, 0.5, 4.0)?);
    let draft: Arc<dyn DraftLm> = Arc::new(AlignedDraft::new(target.clone(), 0.7, 1)?);
    let setup = Setup {
        models: Models::new(target, draft)?,
        prompt: tokens(&[1, 2, 3]),
        decode: DecodeConfig::default(),
        latency: LatencyParams::default(),
        seeds: (0..4).collect(),
    };
    let sweep = sweep_batching(&setup, &[1, 2, 4, 8, 16, 32, 64], &BatchScaling::default())?;
    println!("{:>4} {:>5} {:>7} {:>8} {:>8} {:>9}", "B", "kappa", "streams", "vanilla", "mirror", "overhead");
    for r in &sweep.rows {
        println!(
            "{:>4} {:>5} {:>7} {:>8.4} {:>8.4} {:>9.4}",
            r.batch, r.kappa, r.ss_streams, r.vanilla.speedup, r.mirror.speedup, r.draft_overhead
        );
    }
    for v in &sweep.violations {
        println!("violation: {v}");
    }
    Ok(())
}
