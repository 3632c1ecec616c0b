//! Fallback frequency over Top-κ width and exit depth, next to the overlap
//! mass of each cell.

use std::sync::Arc;

use mirror_sd::config::DecodeConfig;
use mirror_sd::dist::tokens;
use mirror_sd::models::{AlignedDraft, DraftLm, LayeredLm, SyntheticLayeredLm};
use mirror_sd::sim::{sweep_fallback, Models, Setup};
use mirror_sd::timing::LatencyParams;

fn main() -> mirror_sd::Result<()> {
    let target: Arc<dyn LayeredLm> = Arc::new(SyntheticLayeredLm::new(8, 32, 0, 0.8, 4.0)?);
    let draft: Arc<dyn DraftLm> = Arc::new(AlignedDraft::new(target.clone(), 0.7, 1)?);
    let setup = Setup {
        models: Models::new(target, draft)?,
        prompt: tokens(&[1, 2, 3]),
        decode: DecodeConfig {
            temperature: 1.0,
            ..Default::default()
        },
        latency: LatencyParams::default(),
        seeds: (0..10).collect(),
    };
    let sweep = sweep_fallback(&setup, &[1, 2, 4, 8, 16], &[2, 4, 6], 1000)?;
    println!(
        "{} sessions, {} steps, {} corrected, E[A] {:.3}",
        sweep.sessions, sweep.steps, sweep.corrected_steps, sweep.mean_accept
    );
    println!("{:>4} {:>5} {:>8} {:>8} {:>8}", "exit", "kappa", "FF", "±", "1-Ω");
    for c in &sweep.cells {
        println!(
            "{:>4} {:>5} {:>8.4} {:>8.4} {:>8.4}",
            c.exit_layer,
            c.kappa,
            c.ff,
            c.ff_stderr,
            1.0 - c.omega
        );
    }
    for v in &sweep.violations {
        println!("violation: {v}");
    }
    Ok(())
}
