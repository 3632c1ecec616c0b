//! Multi-token draft steps: the same window as one-token drafting, filled
//! in fewer internal steps.

use std::sync::Arc;

use mirror_sd::dist::tokens;
use mirror_sd::models::{AlignedDraft, DraftLm, LayeredLm, SyntheticLayeredLm};
use mirror_sd::rng::Rng;
use mirror_sd::sd::speculate_window;
use mirror_sd::ss::{ss_window, work_bound, SsDraft};

fn main() -> mirror_sd::Result<()> {
    let target: Arc<dyn LayeredLm> = Arc::new(SyntheticLayeredLm::new(8, 32, 0, 0.5, 4.0)?);
    let draft: Arc<dyn DraftLm> = Arc::new(AlignedDraft::new(target.clone(), 0.7, 1)?);
    let ctx = tokens(&[1, 2, 3]);
    let gamma = 7;

    let plain = speculate_window(draft.as_ref(), &ctx, gamma, 1.0, &mut Rng::new(5));
    println!("one token per step: {:?} in {} steps", plain.tokens, plain.draft_steps);

    for (streams, keep) in [(1, 0.5), (3, 0.7), (3, 1.0)] {
        let ss = SsDraft::new(draft.clone(), streams, keep)?;
        let w = ss_window(&ss, &ctx, gamma, 1.0, &mut Rng::new(5));
        assert_eq!(w.tokens, plain.tokens);
        println!(
            "{streams} streams, keep {keep}: {} steps, mean η {:.2}, expected η {:.2}",
            w.draft_steps,
            w.eta_bar,
            ss.expected_eta()
        );
    }

    let b = work_bound(gamma, &[4, 3])?;
    println!("\nemissions [4, 3]: J = {}, η̄ = {}, bound ⌈γ/η̄⌉ = {}, holds: {}", b.steps, b.eta_bar, b.bound, b.holds());
    Ok(())
}
