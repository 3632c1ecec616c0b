//! Mirror speculative decoding on toy language models.
//!
//! The crate has two halves. The semantic half ([`sd`], [`mirror`], [`ss`])
//! decides which tokens get drafted, verified and committed, against
//! controllable models from [`models`]. The timing half ([`timing`], [`sim`])
//! charges each step with an analytic latency model of a target and a draft
//! running on separate devices, so speedups and their limits can be measured
//! without real accelerators.
//!
//! ```
//! use std::sync::Arc;
//! use mirror_sd::config::DecodeConfig;
//! use mirror_sd::dist::tokens;
//! use mirror_sd::mirror::{mirror_decode, MirrorOptions};
//! use mirror_sd::models::{AlignedDraft, DraftLm, LayeredLm, SyntheticLayeredLm};
//! use mirror_sd::sd::{ar_decode, Autoregressive};
//!
//! let target: Arc<dyn LayeredLm> = Arc::new(SyntheticLayeredLm::new(8, 32, 1, 0.5, 4.0)?);
//! let draft: Arc<dyn DraftLm> = Arc::new(AlignedDraft::new(target.clone(), 0.7, 2)?);
//! let cfg = DecodeConfig { max_new_tokens: 40, ..Default::default() };
//! let prompt = tokens(&[1, 2, 3]);
//! let run = mirror_decode(target.as_ref(), &Autoregressive(draft), &prompt, &cfg, MirrorOptions::default())?;
//! assert_eq!(run.generated, ar_decode(target.as_ref(), &prompt, &cfg)?);
//! # Ok::<(), mirror_sd::Error>(())
//! ```

pub mod cli;
pub mod config;
pub mod dist;
pub mod error;
pub mod mirror;
pub mod models;
pub mod rng;
pub mod sd;
pub mod sim;
pub mod ss;
pub mod timing;

pub use error::{Error, Result};
