//! How the early-exit proxy sharpens with depth: agreement of the Top-κ set
//! read at each layer with the final distribution, and the message the
//! target would send to the draft.

use mirror_sd::dist::tokens;
use mirror_sd::mirror::{early_exit_message, overlap_mass};
use mirror_sd::models::{LayeredLm, SyntheticLayeredLm};

fn main() -> mirror_sd::Result<()> {
    let target = SyntheticLayeredLm::new(8, 32, 0, 0.8, 4.0)?;
    let ctx = tokens(&[1, 2, 3, 4]);
    let last = target.final_dist(&ctx);
    println!("final argmax: {}", last.argmax());

    println!("{:>5} {:>8} {:>8} {:>8}", "layer", "Ω_1", "Ω_4", "Ω_8");
    for layer in 1..target.depth() {
        let proxy = target.layer_dist(&ctx, layer)?;
        let omegas: Vec<String> = [1, 4, 8]
            .iter()
            .map(|&k| overlap_mass(&last, &proxy, k).map(|o| format!("{o:8.4}")))
            .collect::<mirror_sd::Result<_>>()?;
        println!("{layer:>5} {}", omegas.join(" "));
    }

    let msg = early_exit_message(&target, &ctx, 4, 8)?;
    println!("\nTop-8 message from layer {}:", msg.origin_layer);
    for e in &msg.entries {
        println!("  token {:>3}  log p {:.3}", e.token, e.logp);
    }
    Ok(())
}
