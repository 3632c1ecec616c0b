//! Mirror decoding step by step: how often the next window comes out of the
//! hypothesis tree, and the resulting fallback frequency.

use std::collections::BTreeMap;
use std::sync::Arc;

use mirror_sd::config::DecodeConfig;
use mirror_sd::dist::tokens;
use mirror_sd::mirror::{fallback_stats, mirror_decode, MirrorOptions};
use mirror_sd::models::{AlignedDraft, DraftLm, LayeredLm, SyntheticLayeredLm};
use mirror_sd::sd::{ar_decode, Autoregressive};

fn main() -> mirror_sd::Result<()> {
    let target: Arc<dyn LayeredLm> = Arc::new(SyntheticLayeredLm::new(8, 32, 0, 0.5, 4.0)?);
    let draft: Arc<dyn DraftLm> = Arc::new(AlignedDraft::new(target.clone(), 0.7, 1)?);
    let prompt = tokens(&[1, 2, 3]);

    for kappa in [1, 4, 16] {
        let cfg = DecodeConfig {
            kappa,
            temperature: 1.0,
            seed: 11,
            ..Default::default()
        };
        let run = mirror_decode(target.as_ref(), &Autoregressive(draft.clone()), &prompt, &cfg, MirrorOptions::default())?;
        assert_eq!(run.generated, ar_decode(target.as_ref(), &prompt, &cfg)?);

        let mut cases: BTreeMap<String, usize> = BTreeMap::new();
        for r in &run.records {
            let key = r.reuse.map(|c| format!("{c:?}")).unwrap_or_else(|| "none".into());
            *cases.entry(key).or_default() += 1;
        }
        let stats = fallback_stats(&run.records)?;
        println!(
            "kappa {kappa:>2}: {} steps, FF {:.3} ± {:.3} over {} corrected steps, mean Ω {:.3}, cases {cases:?}",
            run.records.len(),
            stats.ff,
            stats.ff_stderr,
            stats.corrected_steps,
            stats.omega
        );
    }
    Ok(())
}
