//! Text decoding with corpus-fitted models: a 4-gram target with proxy
//! layers and a bigram draft, both over byte tokens.

use std::path::Path;
use std::sync::Arc;

use mirror_sd::config::DecodeConfig;
use mirror_sd::mirror::{fallback_stats, mirror_decode, MirrorOptions};
use mirror_sd::models::text::{load_corpus, Tokenizer};
use mirror_sd::models::{fit_ngram, DraftLm, LayeredLm, ProxyLayers};
use mirror_sd::sd::{acceptance_stats, ar_decode, sd_decode, Autoregressive};

fn main() -> mirror_sd::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/corpus.txt");
    let tok = Tokenizer::Bytes;
    let corpus = load_corpus(&path, &tok)?;
    let vocab = tok.vocab_size();

    let target: Arc<dyn LayeredLm> = Arc::new(ProxyLayers::new(fit_ngram(&corpus, 4, 0.01, vocab)?, 8, 0.5, 0)?);
    let draft: Arc<dyn DraftLm> = Arc::new(fit_ngram(&corpus, 2, 0.01, vocab)?);
    let drafter = Autoregressive(draft);
    let prompt = tok.encode("The draft ")?;
    let cfg = DecodeConfig {
        max_new_tokens: 160,
        gamma: 5,
        temperature: 0.6,
        seed: 3,
        ..Default::default()
    };

    let reference = ar_decode(target.as_ref(), &prompt, &cfg)?;
    println!("{}{}\n", tok.decode(&prompt), tok.decode(&reference));

    let sd = sd_decode(target.as_ref(), &drafter, &prompt, &cfg)?;
    let (mean, rho) = acceptance_stats(&sd.results, cfg.gamma)?;
    println!("vanilla: {} steps, E[A] {mean:.3}, rho {rho:.3}", sd.results.len());

    let m = mirror_decode(target.as_ref(), &drafter, &prompt, &cfg, MirrorOptions::default())?;
    let stats = fallback_stats(&m.records)?;
    println!("mirror:  {} steps, FF {:.3}, mean Ω {:.3}", m.records.len(), stats.ff, stats.omega);
    assert_eq!(sd.generated, reference);
    assert_eq!(m.generated, reference);
    Ok(())
}
