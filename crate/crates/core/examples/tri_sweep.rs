//! Window length against acceptance and step latency for each mode.

use std::sync::Arc;

use mirror_sd::config::DecodeConfig;
use mirror_sd::dist::tokens;
use mirror_sd::models::{AlignedDraft, DraftLm, LayeredLm, SyntheticLayeredLm};
use mirror_sd::sim::{sweep_tri_objective, Mode, Models, Setup};
use mirror_sd::timing::LatencyParams;

fn main() -> mirror_sd::Result<()> {
    let target: Arc<dyn LayeredLm> = Arc::new(SyntheticLayeredLm::new(8, 32, 0, 0.5, 4.0)?);
    let draft: Arc<dyn DraftLm> = Arc::new(AlignedDraft::new(target.clone(), 0.7, 1)?);
    let mut latency = LatencyParams::unit_layers(8, 4, 0.05);
    latency.draft_step_compute = 0.5;
    let setup = Setup {
        models: Models::new(target, draft)?,
        prompt: tokens(&[1, 2, 3]),
        decode: DecodeConfig {
            temperature: 1.0,
            max_new_tokens: 100,
            ..Default::default()
        },
        latency,
        seeds: (0..4).collect(),
    };
    let modes = [Mode::Vanilla, Mode::Mirror, Mode::MirrorSs];
    let sweep = sweep_tri_objective(&setup, &(1..=16).collect::<Vec<_>>(), &modes)?;
    println!("hidden step {:.3} ms, Δ {:.3} ms", sweep.hidden_step_ms, sweep.overlap_budget_ms);
    println!("{:>5} {:>10} {:>10} {:>10} {:>7}", "gamma", "vanilla", "mirror", "mirror_ss", "rho");
    for chunk in sweep.rows.chunks(modes.len()) {
        println!(
            "{:>5} {:>10.3} {:>10.3} {:>10.3} {:>7.3}",
            chunk[0].gamma, chunk[0].step_ms, chunk[1].step_ms, chunk[2].step_ms, chunk[1].rho
        );
    }
    println!("zero-slope region: {:?}", sweep.zero_slope_gamma);
    for v in &sweep.violations {
        println!("violation: {v}");
    }
    Ok(())
}
