//! Draft-then-verify decoding against target-only decoding: same tokens,
//! fewer target passes.

use std::sync::Arc;

use mirror_sd::config::DecodeConfig;
use mirror_sd::dist::tokens;
use mirror_sd::models::{AlignedDraft, DraftLm, LayeredLm, SyntheticLayeredLm};
use mirror_sd::sd::{acceptance_stats, ar_decode, sd_decode, AcceptanceResult, Autoregressive};

fn main() -> mirror_sd::Result<()> {
    let target: Arc<dyn LayeredLm> = Arc::new(SyntheticLayeredLm::new(8, 32, 0, 0.5, 4.0)?);
    let prompt = tokens(&[1, 2, 3]);
    for fidelity in [0.3, 0.7, 0.95] {
        let draft: Arc<dyn DraftLm> = Arc::new(AlignedDraft::new(target.clone(), fidelity, 1)?);
        for temperature in [0.0, 1.0] {
            let cfg = DecodeConfig {
                temperature,
                max_new_tokens: 200,
                seed: 7,
                ..Default::default()
            };
            let run = sd_decode(target.as_ref(), &Autoregressive(draft.clone()), &prompt, &cfg)?;
            assert_eq!(run.generated, ar_decode(target.as_ref(), &prompt, &cfg)?);
            let trace: Vec<AcceptanceResult> = run.results.clone();
            let (mean, rho) = acceptance_stats(&trace, cfg.gamma)?;
            println!(
                "fidelity {fidelity:.2} temp {temperature}: {} tokens in {} target passes, E[A] {mean:.3}, rho {rho:.3}",
                run.generated.len(),
                trace.len()
            );
        }
    }
    Ok(())
}
