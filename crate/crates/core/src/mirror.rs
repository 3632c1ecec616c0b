//! One step of mirrored speculation.
//!
//! At the early-exit layer ℓ_e the target publishes the Top-κ tokens of its
//! proxy distribution. While the target finishes its remaining layers and
//! verifies the current window, the draft expands every candidate into a
//! depth-γ branch. If the corrected prefix the target ends up committing is
//! already a path in that tree, the branch's remaining tokens become the next
//! window; otherwise the draft starts over from the corrected context.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::DecodeConfig;
use crate::dist::{Distribution, TokenId, TopKEntry};
use crate::error::{invalid, Result};
use crate::models::LayeredLm;
use crate::rng::SessionStreams;
use crate::sd::{
    check_session, commit, verify, AcceptanceResult, DecodeRun, Drafter, SpeculativeWindow,
    WindowSource,
};
use crate::sim::StepRecord;

/// Early-exit token channel payload M_t.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopKMessage {
    pub entries: Vec<TopKEntry>,
    pub origin_layer: usize,
    pub origin_position: usize,
}

impl TopKMessage {
    pub fn kappa(&self) -> usize {
        self.entries.len()
    }

    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.entries.iter().map(|e| e.token)
    }

    /// Items carried by the channel for a batch of `batch` sequences.
    pub fn payload_items(&self, batch: usize) -> usize {
        batch * self.entries.len()
    }
}

/// Top-κ of the target's distribution at `exit_layer`.
pub fn early_exit_message(
    target: &dyn LayeredLm,
    ctx: &[TokenId],
    exit_layer: usize,
    kappa: usize,
) -> Result<TopKMessage> {
    if exit_layer < 1 || exit_layer >= target.depth() {
        return Err(invalid(format!(
            "exit layer {exit_layer} outside [1, {}]",
            target.depth() - 1
        )));
    }
    let proxy = target.layer_dist(ctx, exit_layer)?;
    message_from(&proxy, exit_layer, ctx.len(), kappa)
}

fn message_from(
    proxy: &Distribution,
    exit_layer: usize,
    position: usize,
    kappa: usize,
) -> Result<TopKMessage> {
    Ok(TopKMessage {
        entries: proxy.top_k(kappa)?,
        origin_layer: exit_layer,
        origin_position: position,
    })
}

/// One root of the hypothesis tree and its linear continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub root: TokenId,
    /// γ − 1 draft tokens following `root`.
    pub continuation: Vec<TokenId>,
    /// Internal draft steps spent on the continuation.
    pub draft_steps: usize,
}

impl Branch {
    /// `root` followed by the continuation.
    pub fn path(&self) -> Vec<TokenId> {
        let mut p = Vec::with_capacity(1 + self.continuation.len());
        p.push(self.root);
        p.extend_from_slice(&self.continuation);
        p
    }

    pub fn depth(&self) -> usize {
        1 + self.continuation.len()
    }
}

/// κ root-anchored branches of depth γ, built for one position.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisTree {
    pub branches: Vec<Branch>,
    pub built_for_position: usize,
    pub gamma: usize,
}

impl HypothesisTree {
    pub fn roots(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.branches.iter().map(|b| b.root)
    }

    /// Internal draft steps of each branch, in branch order.
    pub fn branch_steps(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.draft_steps).collect()
    }
}

/// Expands every message candidate into a depth-γ branch. Branch `i` draws
/// from the substream keyed by `(position, i)`, so the branches do not depend
/// on each other or on the order they are built in.
pub fn build_tree(
    drafter: &dyn Drafter,
    ctx: &[TokenId],
    msg: &TopKMessage,
    gamma: usize,
    temperature: f64,
    streams: &SessionStreams,
) -> Result<HypothesisTree> {
    if gamma < 1 {
        return Err(invalid("gamma must be at least 1"));
    }
    let position = ctx.len();
    let mut rooted = ctx.to_vec();
    let branches = msg
        .tokens()
        .enumerate()
        .map(|(i, root)| {
            if gamma == 1 {
                return Branch {
                    root,
                    continuation: Vec::new(),
                    draft_steps: 0,
                };
            }
            rooted.truncate(position);
            rooted.push(root);
            let mut rng = streams.branch(position, i);
            let w = drafter.draft(&rooted, gamma - 1, temperature, &mut rng);
            Branch {
                root,
                continuation: w.tokens,
                draft_steps: w.draft_steps,
            }
        })
        .collect();
    Ok(HypothesisTree {
        branches,
        built_for_position: position,
        gamma,
    })
}

/// Paths_r: distinct length-r prefixes over all branches.
pub fn paths_at_depth(tree: &HypothesisTree, r: usize) -> Result<BTreeSet<Vec<TokenId>>> {
    if r < 1 || r > tree.gamma {
        return Err(invalid(format!("depth {r} outside [1, {}]", tree.gamma)));
    }
    Ok(tree
        .branches
        .iter()
        .filter(|b| b.depth() >= r)
        .map(|b| b.path()[..r].to_vec())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReuseCase {
    RootHit,
    DeepHit,
    Fallback,
}

/// How the next window is obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct ReuseDecision {
    pub case: ReuseCase,
    pub branch_index: Option<usize>,
    /// Precomputed tokens after the corrected prefix; absent on fallback.
    pub continuation: Option<Vec<TokenId>>,
    /// The window was fully accepted, so there was nothing to look up.
    pub no_correction: bool,
}

impl ReuseDecision {
    fn fallback(no_correction: bool) -> Self {
        Self {
            case: ReuseCase::Fallback,
            branch_index: None,
            continuation: None,
            no_correction,
        }
    }

    /// F_t; `None` when the step had no correction.
    pub fn fallback_flag(&self) -> Option<bool> {
        (!self.no_correction).then_some(self.case == ReuseCase::Fallback)
    }
}

/// Checks whether Π_t^+ is a path of the tree. The first matching branch in
/// ascending index order supplies the continuation.
pub fn reuse_lookup(tree: &HypothesisTree, result: &AcceptanceResult) -> Result<ReuseDecision> {
    if tree.built_for_position != result.position {
        return Err(invalid(format!(
            "tree built for position {} but verification is at {}",
            tree.built_for_position, result.position
        )));
    }
    let Some(prefix) = result.corrected_prefix() else {
        return Ok(ReuseDecision::fallback(true));
    };
    let tau = prefix.len();
    if tau > tree.gamma {
        return Ok(ReuseDecision::fallback(false));
    }
    let hit = tree
        .branches
        .iter()
        .position(|b| b.depth() >= tau && b.path()[..tau] == prefix[..]);
    Ok(match hit {
        Some(i) => {
            let path = tree.branches[i].path();
            ReuseDecision {
                case: if result.accepted_len == 0 {
                    ReuseCase::RootHit
                } else {
                    ReuseCase::DeepHit
                },
                branch_index: Some(i),
                continuation: Some(path[tau..].to_vec()),
                no_correction: false,
            }
        }
        None => ReuseDecision::fallback(false),
    })
}

/// Ω_κ: mass under `final_dist` of the proxy's Top-κ set.
pub fn overlap_mass(final_dist: &Distribution, proxy: &Distribution, kappa: usize) -> Result<f64> {
    if final_dist.vocab_size() != proxy.vocab_size() {
        return Err(invalid("distributions over different vocabularies"));
    }
    let top = proxy.top_k(kappa)?;
    Ok(final_dist.mass(top.iter().map(|e| &e.token)).min(1.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MirrorOptions {
    /// Ignore tree hits and always roll out a fresh window.
    pub force_fallback: bool,
}

/// Everything one mirror step produced.
#[derive(Debug, Clone)]
pub struct MirrorStep {
    pub message: TopKMessage,
    pub tree: HypothesisTree,
    pub window: SpeculativeWindow,
    pub result: AcceptanceResult,
    pub decision: ReuseDecision,
    pub record: StepRecord,
}

/// Runs one step at context `ctx`. `window` is the window selected at the end
/// of the previous step; `None` means a fresh rollout.
pub fn mirror_step(
    target: &dyn LayeredLm,
    drafter: &dyn Drafter,
    ctx: &[TokenId],
    window: Option<SpeculativeWindow>,
    config: &DecodeConfig,
    options: MirrorOptions,
    streams: &SessionStreams,
    step: usize,
    budget: usize,
) -> Result<MirrorStep> {
    if ctx.is_empty() {
        return Err(invalid("mirror step needs a non-empty context"));
    }
    let exit = config.exit_layer_for(target.depth());
    let proxy = target.layer_dist(ctx, exit)?;
    let message = message_from(&proxy, exit, ctx.len(), config.kappa)?;
    let omega = overlap_mass(&target.final_dist(ctx), &proxy, config.kappa)?;

    let tree = build_tree(drafter, ctx, &message, config.gamma, config.temperature, streams)?;

    let window = match window {
        Some(w) => w,
        None => {
            let len = config.gamma.min(budget);
            let mut rng = streams.draft_window(ctx.len());
            drafter.draft(ctx, len, config.temperature, &mut rng)
        }
    };
    let mut result = verify(target, ctx, &window, config.temperature, streams)?;
    let mut decision = reuse_lookup(&tree, &result)?;
    if options.force_fallback && decision.case != ReuseCase::Fallback {
        decision = ReuseDecision::fallback(decision.no_correction);
    }
    result.fallback = decision.fallback_flag();

    let record = StepRecord::mirror(step, &window, &result, &decision, &tree, config.kappa, omega);
    Ok(MirrorStep {
        message,
        tree,
        window,
        result,
        decision,
        record,
    })
}

/// Window for the step at `ctx` given the previous step's decision: the
/// reused continuation, extended with fresh draft tokens up to `len`.
pub fn next_window(
    drafter: &dyn Drafter,
    ctx: &[TokenId],
    decision: &ReuseDecision,
    len: usize,
    temperature: f64,
    streams: &SessionStreams,
) -> Option<SpeculativeWindow> {
    let continuation = decision.continuation.as_ref()?;
    let reused = &continuation[..continuation.len().min(len)];
    if reused.is_empty() || len == 0 {
        return None;
    }
    let source = match decision.case {
        ReuseCase::RootHit => WindowSource::ReusedRoot,
        _ => WindowSource::ReusedBranch,
    };
    let mut tokens = reused.to_vec();
    let (draft_steps, eta_bar) = if tokens.len() < len {
        let mut extended = ctx.to_vec();
        extended.extend_from_slice(&tokens);
        let mut rng = streams.top_up(ctx.len());
        let top = drafter.draft(&extended, len - tokens.len(), temperature, &mut rng);
        tokens.extend_from_slice(&top.tokens);
        (top.draft_steps, top.eta_bar)
    } else {
        (0, 0.0)
    };
    Some(SpeculativeWindow {
        tokens,
        source,
        draft_steps,
        eta_bar,
    })
}

/// Mirror speculative decoding until `max_new_tokens` or EOS.
pub fn mirror_decode(
    target: &dyn LayeredLm,
    drafter: &dyn Drafter,
    prompt: &[TokenId],
    config: &DecodeConfig,
    options: MirrorOptions,
) -> Result<DecodeRun> {
    check_session(target, drafter.vocab_size(), prompt, config)?;
    let streams = SessionStreams::new(config.seed);
    let mut ctx = prompt.to_vec();
    let mut generated = Vec::with_capacity(config.max_new_tokens);
    let mut results = Vec::new();
    let mut records = Vec::new();
    let mut pending: Option<SpeculativeWindow> = None;
    while generated.len() < config.max_new_tokens {
        let budget = config.max_new_tokens - generated.len();
        let step = mirror_step(
            target,
            drafter,
            &ctx,
            pending.take(),
            config,
            options,
            &streams,
            records.len(),
            budget,
        )?;
        let done = commit(&mut ctx, &mut generated, &step.result.committed, config);
        records.push(step.record);
        results.push(step.result);
        if done {
            break;
        }
        let len = config.gamma.min(config.max_new_tokens - generated.len());
        pending = next_window(drafter, &ctx, &step.decision, len, config.temperature, &streams);
    }
    Ok(DecodeRun {
        generated,
        results,
        records,
    })
}

/// Fallback frequency over corrected steps and the mean overlap mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FallbackStats {
    /// FF = mean F_t over steps with a correction (0 when there were none).
    pub ff: f64,
    /// Standard error of `ff`.
    pub ff_stderr: f64,
    pub corrected_steps: usize,
    /// Mean Ω_κ over all steps.
    pub omega: f64,
    /// Mean Ω_κ over the corrected steps only.
    pub omega_corrected: f64,
}

pub fn fallback_stats(trace: &[StepRecord]) -> Result<FallbackStats> {
    if trace.is_empty() {
        return Err(invalid("fallback stats need at least one step"));
    }
    let omegas: Vec<f64> = trace.iter().filter_map(|r| r.omega).collect();
    let omega = mean(&omegas);
    let corrected: Vec<&StepRecord> = trace.iter().filter(|r| r.fallback.is_some()).collect();
    let flags: Vec<f64> = corrected
        .iter()
        .map(|r| if r.fallback == Some(true) { 1.0 } else { 0.0 })
        .collect();
    let ff = mean(&flags);
    let n = flags.len() as f64;
    let ff_stderr = if flags.len() > 1 {
        (ff * (1.0 - ff) / n).sqrt()
    } else {
        0.0
    };
    let omega_corrected = mean(&corrected.iter().filter_map(|r| r.omega).collect::<Vec<_>>());
    Ok(FallbackStats {
        ff,
        ff_stderr,
        corrected_steps: flags.len(),
        omega,
        omega_corrected,
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
