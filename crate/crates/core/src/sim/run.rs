use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::DecodeConfig;
use crate::dist::TokenId;
use crate::error::{invalid, Error, Result};
use crate::mirror::{fallback_stats, mirror_decode, MirrorOptions};
use crate::models::{DraftLm, LayeredLm};
use crate::sd::{ar_decode, sd_decode, Autoregressive, Drafter};
use crate::ss::{SsDraft, DEFAULT_KEEP_PROB, DEFAULT_STREAMS};
use crate::timing::{mirror_step_latency, tree_time, LatencyParams};

use super::record::StepRecord;
use super::timeline::StepTimeline;

/// Tolerance between a scheduled timeline and the closed-form step time.
pub const TIMELINE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ar,
    Vanilla,
    Mirror,
    MirrorSs,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Ar, Mode::Vanilla, Mode::Mirror, Mode::MirrorSs];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Ar => "ar",
            Mode::Vanilla => "vanilla",
            Mode::Mirror => "mirror",
            Mode::MirrorSs => "mirror_ss",
        }
    }

    pub fn is_mirror(self) -> bool {
        matches!(self, Mode::Mirror | Mode::MirrorSs)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown mode {s:?}")))
    }
}

/// Speculative-streaming settings for the mirror_ss mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsSettings {
    pub streams: usize,
    pub keep_prob: f64,
}

impl Default for SsSettings {
    fn default() -> Self {
        Self {
            streams: DEFAULT_STREAMS,
            keep_prob: DEFAULT_KEEP_PROB,
        }
    }
}

/// Target, draft and streaming settings shared by every mode of a run.
#[derive(Clone)]
pub struct Models {
    pub target: Arc<dyn LayeredLm>,
    pub draft: Arc<dyn DraftLm>,
    pub ss: SsSettings,
}

impl Models {
    pub fn new(target: Arc<dyn LayeredLm>, draft: Arc<dyn DraftLm>) -> Result<Self> {
        if target.vocab_size() != draft.vocab_size() {
            return Err(invalid(format!(
                "target vocabulary {} differs from draft vocabulary {}",
                target.vocab_size(),
                draft.vocab_size()
            )));
        }
        Ok(Self {
            target,
            draft,
            ss: SsSettings::default(),
        })
    }

    pub fn with_ss(mut self, ss: SsSettings) -> Self {
        self.ss = ss;
        self
    }

    /// The drafter a speculative mode uses.
    pub fn drafter(&self, mode: Mode) -> Result<Box<dyn Drafter>> {
        Ok(match mode {
            Mode::MirrorSs => Box::new(SsDraft::new(self.draft.clone(), self.ss.streams, self.ss.keep_prob)?),
            _ => Box::new(Autoregressive(self.draft.clone())),
        })
    }
}

/// One decode in one mode with every step charged.
#[derive(Debug, Clone, Serialize)]
pub struct ModeRun {
    pub mode: Mode,
    pub generated: Vec<TokenId>,
    pub records: Vec<StepRecord>,
    pub step_ms: Vec<f64>,
    /// Draft work per step (window plus tree).
    pub draft_gen_ms: Vec<f64>,
    /// Draft work per step not hidden under the target suffix.
    pub exposed_draft_ms: Vec<f64>,
    pub wall_ms: f64,
    /// Target-only wall time for the same tokens.
    pub ar_wall_ms: f64,
    pub params: LatencyParams,
}

impl ModeRun {
    pub fn speedup(&self) -> f64 {
        if self.wall_ms > 0.0 {
            self.ar_wall_ms / self.wall_ms
        } else {
            1.0
        }
    }
}

/// Latency params a mode is charged with: γ, κ and ℓ_e come from the decode
/// config, and modes without a tree carry a single hypothesis.
pub fn mode_params(mode: Mode, depth: usize, cfg: &DecodeConfig, latency: &LatencyParams) -> Result<LatencyParams> {
    if latency.depth() != depth {
        return Err(Error::Config(format!(
            "latency model has {} layers but the target has {depth}",
            latency.depth()
        )));
    }
    let mut p = latency.clone();
    p.gamma = cfg.gamma;
    p.kappa = if mode.is_mirror() { cfg.kappa } else { 1 };
    p.exit_layer = cfg.exit_layer_for(depth);
    p.validate()?;
    Ok(p)
}

fn check_timeline(tl: &StepTimeline, analytic: f64) -> Result<f64> {
    let total = tl.total();
    if (total - analytic).abs() > TIMELINE_TOLERANCE {
        return Err(Error::Property(format!(
            "timeline total {total} ms differs from closed form {analytic} ms"
        )));
    }
    Ok(analytic)
}

/// Decodes `prompt` in `mode` and charges every step with `latency`, which
/// should come from [`mode_params`] (possibly batch-scaled afterwards).
pub fn run_mode(
    mode: Mode,
    models: &Models,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
    latency: &LatencyParams,
) -> Result<ModeRun> {
    let target = models.target.as_ref();
    let params = latency.clone();
    params.validate()?;
    let ar_step = params.target_time();
    let mut run = ModeRun {
        mode,
        generated: Vec::new(),
        records: Vec::new(),
        step_ms: Vec::new(),
        draft_gen_ms: Vec::new(),
        exposed_draft_ms: Vec::new(),
        wall_ms: 0.0,
        ar_wall_ms: 0.0,
        params: params.clone(),
    };
    let mut clock = 0.0;
    match mode {
        Mode::Ar => {
            run.generated = ar_decode(target, prompt, cfg)?;
            for _ in &run.generated {
                let t = check_timeline(&StepTimeline::autoregressive(&params, clock), ar_step)?;
                clock += t;
                run.step_ms.push(t);
                run.draft_gen_ms.push(0.0);
                run.exposed_draft_ms.push(0.0);
            }
        }
        Mode::Vanilla => {
            let drafter = models.drafter(mode)?;
            let out = sd_decode(target, drafter.as_ref(), prompt, cfg)?;
            for r in &out.records {
                let dg = crate::timing::draft_gen_time(&params, r.draft_steps);
                let analytic = crate::timing::vanilla_step_latency(&params, dg);
                let t = check_timeline(&StepTimeline::vanilla(&params, clock, r.draft_steps), analytic)?;
                clock += t;
                run.step_ms.push(t);
                run.draft_gen_ms.push(dg);
                run.exposed_draft_ms.push(dg);
            }
            run.generated = out.generated;
            run.records = out.records;
        }
        Mode::Mirror | Mode::MirrorSs => {
            let drafter = models.drafter(mode)?;
            let out = mirror_decode(target, drafter.as_ref(), prompt, cfg, MirrorOptions::default())?;
            for r in &out.records {
                let dg = crate::timing::draft_gen_time(&params, r.draft_steps) + tree_time(&params, &r.tree_steps);
                let analytic = mirror_step_latency(&params, dg);
                let tl = StepTimeline::mirror(&params, clock, r.draft_steps, &r.tree_steps);
                let t = check_timeline(&tl, analytic.total)?;
                clock += t;
                run.step_ms.push(t);
                run.draft_gen_ms.push(dg);
                run.exposed_draft_ms.push(analytic.exposed_draft());
            }
            run.generated = out.generated;
            run.records = out.records;
        }
    }
    run.wall_ms = run.step_ms.iter().sum();
    run.ar_wall_ms = run.generated.iter().map(|_| ar_step).sum();
    Ok(run)
}

/// Per-step timelines of a run, laid end to end from time zero.
pub fn timelines(run: &ModeRun) -> Vec<StepTimeline> {
    let p = &run.params;
    let mut clock = 0.0;
    let mut out = Vec::with_capacity(run.step_ms.len());
    if run.mode == Mode::Ar {
        for t in &run.step_ms {
            out.push(StepTimeline::autoregressive(p, clock));
            clock += t;
        }
        return out;
    }
    for (r, t) in run.records.iter().zip(&run.step_ms) {
        out.push(if run.mode.is_mirror() {
            StepTimeline::mirror(p, clock, r.draft_steps, &r.tree_steps)
        } else {
            StepTimeline::vanilla(p, clock, r.draft_steps)
        });
        clock += t;
    }
    out
}

/// Aggregate over one or more sessions of the same mode and settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub mode: Mode,
    pub batch: usize,
    pub gamma: usize,
    pub kappa: usize,
    pub exit_layer: usize,
    pub sessions: usize,
    pub tokens: usize,
    pub steps: usize,
    /// Mean A_t over speculative steps (0 for target-only decoding).
    pub mean_accept: f64,
    /// E[A_t]/γ.
    pub rho: f64,
    pub ff: Option<f64>,
    pub omega: Option<f64>,
    pub wall_ms: f64,
    pub ar_wall_ms: f64,
    /// Mean step latency.
    pub step_ms: f64,
    pub tokens_per_sec: f64,
    /// Target-only wall time over this mode's wall time.
    pub speedup: f64,
    pub draft_gen_ms: f64,
    pub exposed_draft_ms: f64,
    /// Largest per-step draft work, for checking the zero-slope region.
    pub max_draft_gen_ms: f64,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl ExperimentResult {
    pub fn from_runs(runs: &[ModeRun], cfg: &DecodeConfig) -> Result<Self> {
        let first = runs.first().ok_or_else(|| invalid("no runs to summarize"))?;
        let mode = first.mode;
        if runs.iter().any(|r| r.mode != mode) {
            return Err(invalid("cannot summarize runs of different modes"));
        }
        let records: Vec<StepRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
        let tokens: usize = runs.iter().map(|r| r.generated.len()).sum();
        let steps: usize = runs.iter().map(|r| r.step_ms.len()).sum();
        let wall_ms: f64 = runs.iter().map(|r| r.wall_ms).sum();
        let ar_wall_ms: f64 = runs.iter().map(|r| r.ar_wall_ms).sum();
        let mean_accept = mean(records.iter().map(|r| r.accepted_len as f64));
        let (ff, omega) = if mode.is_mirror() && !records.is_empty() {
            let s = fallback_stats(&records)?;
            (Some(s.ff), Some(s.omega))
        } else {
            (None, None)
        };
        let all = |f: fn(&ModeRun) -> &Vec<f64>| runs.iter().flat_map(move |r| f(r).iter().copied());
        Ok(Self {
            mode,
            batch: first.params.batch,
            gamma: cfg.gamma,
            kappa: first.params.kappa,
            exit_layer: first.params.exit_layer,
            sessions: runs.len(),
            tokens,
            steps,
            mean_accept,
            rho: mean_accept / cfg.gamma as f64,
            ff,
            omega,
            wall_ms,
            ar_wall_ms,
            step_ms: if steps == 0 { 0.0 } else { wall_ms / steps as f64 },
            tokens_per_sec: if wall_ms > 0.0 { tokens as f64 / (wall_ms / 1000.0) } else { 0.0 },
            speedup: if wall_ms > 0.0 { ar_wall_ms / wall_ms } else { 1.0 },
            draft_gen_ms: mean(all(|r| &r.draft_gen_ms)),
            exposed_draft_ms: mean(all(|r| &r.exposed_draft_ms)),
            max_draft_gen_ms: all(|r| &r.draft_gen_ms).fold(0.0, f64::max),
        })
    }
}

/// Fails with a losslessness error naming the first differing index.
pub fn check_lossless(mode: Mode, reference: &[TokenId], output: &[TokenId]) -> Result<()> {
    if reference == output {
        return Ok(());
    }
    let index = reference
        .iter()
        .zip(output)
        .position(|(a, b)| a != b)
        .unwrap_or(reference.len().min(output.len()));
    Err(Error::Lossless {
        mode: mode.name().to_string(),
        index,
        expected: reference.get(index).copied(),
        actual: output.get(index).copied(),
    })
}

/// Runs every mode in `modes` plus a target-only reference on one prompt
/// and checks that all of them commit the same tokens.
pub fn run_modes(
    modes: &[Mode],
    models: &Models,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
    latency: &LatencyParams,
) -> Result<Vec<ModeRun>> {
    let depth = models.target.depth();
    let reference = ar_decode(models.target.as_ref(), prompt, cfg)?;
    modes
        .iter()
        .map(|&mode| {
            let params = mode_params(mode, depth, cfg, latency)?;
            let run = run_mode(mode, models, prompt, cfg, &params)?;
            check_lossless(mode, &reference, &run.generated)?;
            Ok(run)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::tokens;
    use crate::models::{AlignedDraft, SyntheticLayeredLm};

    fn models(fidelity: f64) -> Models {
        let t: Arc<dyn LayeredLm> = Arc::new(SyntheticLayeredLm::new(8, 32, 1, 0.5, 4.0).unwrap());
        let d: Arc<dyn DraftLm> = Arc::new(AlignedDraft::new(t.clone(), fidelity, 2).unwrap());
        Models::new(t, d).unwrap()
    }

    #[test]
    fn ar_speedup_is_one() {
        let m = models(0.7);
        let cfg = DecodeConfig { max_new_tokens: 30, ..Default::default() };
        let runs = run_modes(&[Mode::Ar], &m, &tokens(&[1]), &cfg, &LatencyParams::default()).unwrap();
        assert_eq!(runs[0].speedup(), 1.0);
        let r = ExperimentResult::from_runs(&runs, &cfg).unwrap();
        assert_eq!(r.speedup, 1.0);
        assert_eq!(r.tokens, 30);
        assert_eq!(r.steps, 30);
    }

    #[test]
    fn all_modes_commit_the_same_tokens() {
        let m = models(0.6);
        for temperature in [0.0, 1.0] {
            let cfg = DecodeConfig { max_new_tokens: 60, temperature, seed: 4, ..Default::default() };
            let runs = run_modes(&Mode::ALL, &m, &tokens(&[1, 2]), &cfg, &LatencyParams::default()).unwrap();
            for r in &runs[1..] {
                assert_eq!(r.generated, runs[0].generated);
                assert!(r.speedup() > 0.0);
            }
        }
    }

    #[test]
    fn hidden_mirror_steps_cost_target_plus_rendezvous() {
        let m = models(0.6);
        let cfg = DecodeConfig { max_new_tokens: 50, gamma: 3, kappa: 2, ..Default::default() };
        let p = mode_params(Mode::Mirror, 8, &cfg, &LatencyParams::default()).unwrap();
        let run = run_mode(Mode::Mirror, &m, &tokens(&[1]), &cfg, &p).unwrap();
        let expected = p.target_time() + p.rv_total();
        for (t, dg) in run.step_ms.iter().zip(&run.draft_gen_ms) {
            assert!(*dg <= p.overlap_budget());
            assert!((t - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn vanilla_steps_follow_serial_law() {
        let m = models(0.6);
        let cfg = DecodeConfig { max_new_tokens: 40, ..Default::default() };
        let p = mode_params(Mode::Vanilla, 8, &cfg, &LatencyParams::default()).unwrap();
        assert_eq!(p.kappa, 1);
        let run = run_mode(Mode::Vanilla, &m, &tokens(&[1]), &cfg, &p).unwrap();
        for (t, r) in run.step_ms.iter().zip(&run.records) {
            let expected = p.target_time() + r.draft_steps as f64 * p.draft_step_time();
            assert!((t - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn mismatched_depth_is_config_error() {
        let m = models(0.6);
        let cfg = DecodeConfig::default();
        let lat = LatencyParams { layer_compute: vec![1.0; 6], exit_layer: 3, ..Default::default() };
        assert!(matches!(mode_params(Mode::Mirror, m.target.depth(), &cfg, &lat), Err(Error::Config(_))));
    }

    #[test]
    fn lossless_check_reports_first_difference() {
        let e = check_lossless(Mode::Mirror, &tokens(&[1, 2, 3]), &tokens(&[1, 5, 3])).unwrap_err();
        match e {
            Error::Lossless { index, expected, actual, .. } => {
                assert_eq!(index, 1);
                assert_eq!(expected, Some(TokenId(2)));
                assert_eq!(actual, Some(TokenId(5)));
            }
            other => panic!("unexpected {other:?}"),
        }
        let e = check_lossless(Mode::Vanilla, &tokens(&[1, 2]), &tokens(&[1])).unwrap_err();
        assert!(matches!(e, Error::Lossless { index: 1, actual: None, .. }));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("turbo".parse::<Mode>().is_err());
    }
}
