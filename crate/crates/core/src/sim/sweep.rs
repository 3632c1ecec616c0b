use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::DecodeConfig;
use crate::dist::TokenId;
use crate::error::{invalid, Error, Result};
use crate::mirror::{build_tree, overlap_mass, reuse_lookup, ReuseCase, TopKMessage};
use crate::rng::SessionStreams;
use crate::sd::{sd_decode, AcceptanceResult, Autoregressive};
use crate::timing::{batch_scale, batching_policy, BatchScaling, LatencyParams};

use super::run::{check_lossless, mode_params, run_mode, ExperimentResult, Mode, ModeRun, Models, SsSettings};

/// Everything an experiment needs besides the swept axis.
#[derive(Clone)]
pub struct Setup {
    pub models: Models,
    pub prompt: Vec<TokenId>,
    pub decode: DecodeConfig,
    pub latency: LatencyParams,
    /// One session per seed; the seed replaces `decode.seed`.
    pub seeds: Vec<u64>,
}

impl Setup {
    fn sessions(&self) -> Result<&[u64]> {
        if self.seeds.is_empty() {
            return Err(invalid("at least one seed is required"));
        }
        Ok(&self.seeds)
    }
}

/// Runs `modes` for every seed, checking each against target-only decoding,
/// and summarizes per mode. `params` maps a mode to its latency params.
pub fn run_sessions(
    setup: &Setup,
    models: &Models,
    decode: &DecodeConfig,
    modes: &[Mode],
    params: impl Fn(Mode) -> Result<LatencyParams> + Sync,
) -> Result<Vec<ExperimentResult>> {
    let per_seed: Vec<Vec<ModeRun>> = setup
        .sessions()?
        .par_iter()
        .map(|&seed| {
            let cfg = DecodeConfig { seed, ..decode.clone() };
            let reference = run_mode(Mode::Ar, models, &setup.prompt, &cfg, &params(Mode::Ar)?)?;
            modes
                .iter()
                .map(|&mode| {
                    if mode == Mode::Ar {
                        return Ok(reference.clone());
                    }
                    let run = run_mode(mode, models, &setup.prompt, &cfg, &params(mode)?)?;
                    check_lossless(mode, &reference.generated, &run.generated)?;
                    Ok(run)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    (0..modes.len())
        .map(|m| {
            let runs: Vec<ModeRun> = per_seed.iter().map(|runs| runs[m].clone()).collect();
            ExperimentResult::from_runs(&runs, decode)
        })
        .collect()
}

/// Runs `modes` under the setup's own decode and latency config.
pub fn run_experiment(setup: &Setup, modes: &[Mode]) -> Result<Vec<ExperimentResult>> {
    let depth = setup.models.target.depth();
    run_sessions(setup, &setup.models, &setup.decode, modes, |mode| {
        mode_params(mode, depth, &setup.decode, &setup.latency)
    })
}

/// Window length against acceptance and step latency.
#[derive(Debug, Clone, Serialize)]
pub struct TriSweep {
    pub rows: Vec<ExperimentResult>,
    /// T_target + T_rv: the step latency whenever all draft work is hidden.
    pub hidden_step_ms: f64,
    pub overlap_budget_ms: f64,
    /// Largest γ up to which every step of the mode was fully hidden.
    pub zero_slope_gamma: BTreeMap<Mode, usize>,
    pub violations: Vec<String>,
}

pub fn sweep_tri_objective(setup: &Setup, gammas: &[usize], modes: &[Mode]) -> Result<TriSweep> {
    if gammas.is_empty() || modes.is_empty() {
        return Err(invalid("tri-objective sweep needs gammas and modes"));
    }
    let depth = setup.models.target.depth();
    let cells: Vec<Vec<ExperimentResult>> = gammas
        .par_iter()
        .map(|&gamma| {
            let decode = DecodeConfig { gamma, ..setup.decode.clone() };
            run_sessions(setup, &setup.models, &decode, modes, |mode| {
                mode_params(mode, depth, &decode, &setup.latency)
            })
        })
        .collect::<Result<_>>()?;
    let reference = mode_params(Mode::Mirror, depth, &setup.decode, &setup.latency)?;
    let hidden = reference.target_time() + reference.rv_total();
    let budget = reference.overlap_budget();
    let rows: Vec<ExperimentResult> = cells.into_iter().flatten().collect();

    let mut violations = Vec::new();
    let mut zero_slope_gamma = BTreeMap::new();
    for &mode in modes {
        let series: Vec<&ExperimentResult> = rows.iter().filter(|r| r.mode == mode).collect();
        if mode.is_mirror() {
            let mut flat_until = 0;
            let mut still_flat = true;
            for r in &series {
                let flat = r.max_draft_gen_ms <= budget;
                if flat && (r.step_ms - hidden).abs() > 1e-9 {
                    violations.push(format!(
                        "{mode} at gamma {}: all draft work hidden but step is {} ms, not {hidden} ms",
                        r.gamma, r.step_ms
                    ));
                }
                still_flat &= flat;
                if still_flat {
                    flat_until = r.gamma;
                }
            }
            zero_slope_gamma.insert(mode, flat_until);
        }
        if mode == Mode::Vanilla {
            for w in series.windows(2) {
                if w[1].gamma > w[0].gamma && w[1].step_ms <= w[0].step_ms {
                    violations.push(format!(
                        "vanilla step latency not increasing from gamma {} to {}",
                        w[0].gamma, w[1].gamma
                    ));
                }
            }
        }
    }
    if let (Some(&m), Some(&s)) = (zero_slope_gamma.get(&Mode::Mirror), zero_slope_gamma.get(&Mode::MirrorSs)) {
        let max_gamma = gammas.iter().copied().max().unwrap_or(0);
        if s < m || (m < max_gamma && s == m) {
            violations.push(format!(
                "streaming zero-slope region (gamma <= {s}) is not wider than mirror's (gamma <= {m})"
            ));
        }
    }
    Ok(TriSweep {
        rows,
        hidden_step_ms: hidden,
        overlap_budget_ms: budget,
        zero_slope_gamma,
        violations,
    })
}

/// Fallback statistics of one (exit layer, κ) cell.
#[derive(Debug, Clone, Serialize)]
pub struct FallbackCell {
    pub exit_layer: usize,
    pub kappa: usize,
    pub ff: f64,
    pub ff_stderr: f64,
    pub corrected_steps: usize,
    /// Mean Ω_κ over all probed steps.
    pub omega: f64,
    /// Mean Ω_κ over corrected steps.
    pub omega_corrected: f64,
    /// Steps with A_t = 0 and their fallback rate.
    pub root_steps: usize,
    pub root_ff: f64,
    /// F_t per corrected step, in probe order.
    #[serde(skip)]
    pub flags: Vec<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FallbackSweep {
    pub cells: Vec<FallbackCell>,
    pub sessions: usize,
    pub steps: usize,
    pub corrected_steps: usize,
    pub mean_accept: f64,
    pub gamma: usize,
    pub violations: Vec<String>,
}

impl FallbackSweep {
    pub fn cell(&self, exit_layer: usize, kappa: usize) -> Option<&FallbackCell> {
        self.cells
            .iter()
            .find(|c| c.exit_layer == exit_layer && c.kappa == kappa)
    }
}

struct Probe {
    ctx: Vec<TokenId>,
    result: AcceptanceResult,
    seed: u64,
}

/// Per-step outcome at one exit: Ω_κ and F_t for every κ.
struct ProbeOutcome {
    omegas: Vec<f64>,
    flags: Option<Vec<bool>>,
    root: bool,
}

fn probe(models: &Models, p: &Probe, exit: usize, kappas: &[usize], cfg: &DecodeConfig) -> Result<ProbeOutcome> {
    let target = models.target.as_ref();
    let proxy = target.layer_dist(&p.ctx, exit)?;
    let q = target.final_dist(&p.ctx);
    let omegas = kappas
        .iter()
        .map(|&k| overlap_mass(&q, &proxy, k))
        .collect::<Result<Vec<_>>>()?;
    let flags = if p.result.correction.is_some() {
        let drafter = Autoregressive(models.draft.clone());
        let streams = SessionStreams::new(p.seed);
        let flags = kappas
            .iter()
            .map(|&k| {
                let msg = TopKMessage {
                    entries: proxy.top_k(k)?,
                    origin_layer: exit,
                    origin_position: p.ctx.len(),
                };
                let tree = build_tree(&drafter, &p.ctx, &msg, cfg.gamma, cfg.temperature, &streams)?;
                Ok(reuse_lookup(&tree, &p.result)?.case == ReuseCase::Fallback)
            })
            .collect::<Result<Vec<_>>>()?;
        Some(flags)
    } else {
        None
    };
    Ok(ProbeOutcome {
        omegas,
        flags,
        root: p.result.accepted_len == 0,
    })
}

/// Most sessions a fallback sweep will decode looking for corrections.
const MAX_FALLBACK_SESSIONS: usize = 10_000;

/// Probes every (exit, κ) cell on the same steps. The steps come from
/// speculative decoding with fresh windows; at each corrected step every
/// cell builds its own tree from the same branch substreams, so the cells
/// are paired step by step.
pub fn sweep_fallback(setup: &Setup, kappas: &[usize], exits: &[usize], min_corrected: usize) -> Result<FallbackSweep> {
    if kappas.is_empty() || exits.is_empty() {
        return Err(invalid("fallback sweep needs kappas and exits"));
    }
    let target = setup.models.target.as_ref();
    let depth = target.depth();
    if let Some(e) = exits.iter().find(|&&e| e < 1 || e >= depth) {
        return Err(invalid(format!("exit layer {e} outside [1, {}]", depth - 1)));
    }
    if let Some(k) = kappas.iter().find(|&&k| k < 1 || k > target.vocab_size()) {
        return Err(invalid(format!("kappa {k} outside [1, {}]", target.vocab_size())));
    }
    let mut kappas = kappas.to_vec();
    kappas.sort_unstable();
    kappas.dedup();
    let mut exits = exits.to_vec();
    exits.sort_unstable();
    exits.dedup();

    let drafter = Autoregressive(setup.models.draft.clone());
    let mut probes = Vec::new();
    let mut corrected = 0;
    let mut accepted = 0;
    let mut sessions = 0;
    let first = setup.sessions()?;
    let extra_start = first.iter().copied().max().unwrap_or(0).wrapping_add(1);
    while sessions == 0 || corrected < min_corrected {
        if sessions >= MAX_FALLBACK_SESSIONS {
            return Err(invalid(format!(
                "only {corrected} corrected steps after {sessions} sessions"
            )));
        }
        let seed = first
            .get(sessions)
            .copied()
            .unwrap_or_else(|| extra_start.wrapping_add((sessions - first.len()) as u64));
        sessions += 1;
        let cfg = DecodeConfig { seed, ..setup.decode.clone() };
        let run = sd_decode(target, &drafter, &setup.prompt, &cfg)?;
        for result in run.results {
            let consumed = result.position - setup.prompt.len();
            let mut ctx = setup.prompt.clone();
            ctx.extend_from_slice(&run.generated[..consumed]);
            corrected += usize::from(result.correction.is_some());
            accepted += result.accepted_len;
            probes.push(Probe { ctx, result, seed });
        }
    }

    let outcomes: Vec<Vec<ProbeOutcome>> = probes
        .par_iter()
        .map(|p| {
            exits
                .iter()
                .map(|&e| probe(&setup.models, p, e, &kappas, &setup.decode))
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for (ei, &exit) in exits.iter().enumerate() {
        for (ki, &kappa) in kappas.iter().enumerate() {
            let omega_all: Vec<f64> = outcomes.iter().map(|o| o[ei].omegas[ki]).collect();
            let corrected_outcomes: Vec<&ProbeOutcome> =
                outcomes.iter().map(|o| &o[ei]).filter(|o| o.flags.is_some()).collect();
            let flags: Vec<bool> = corrected_outcomes.iter().map(|o| o.flags.as_ref().unwrap()[ki]).collect();
            let root: Vec<bool> = corrected_outcomes
                .iter()
                .filter(|o| o.root)
                .map(|o| o.flags.as_ref().unwrap()[ki])
                .collect();
            let ff = rate(&flags);
            let n = flags.len() as f64;
            cells.push(FallbackCell {
                exit_layer: exit,
                kappa,
                ff,
                ff_stderr: if flags.len() > 1 { (ff * (1.0 - ff) / n).sqrt() } else { 0.0 },
                corrected_steps: flags.len(),
                omega: mean(&omega_all),
                omega_corrected: mean(&corrected_outcomes.iter().map(|o| o.omegas[ki]).collect::<Vec<_>>()),
                root_steps: root.len(),
                root_ff: rate(&root),
                flags,
            });
        }
    }
    let violations = fallback_violations(&cells, &exits, &kappas);
    Ok(FallbackSweep {
        cells,
        sessions,
        steps: probes.len(),
        corrected_steps: corrected,
        mean_accept: accepted as f64 / probes.len().max(1) as f64,
        gamma: setup.decode.gamma,
        violations,
    })
}

fn rate(flags: &[bool]) -> f64 {
    if flags.is_empty() {
        0.0
    } else {
        flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Standard error of the mean paired difference a − b.
fn paired_stderr(a: &[bool], b: &[bool]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| f64::from(u8::from(*x)) - f64::from(u8::from(*y))).collect();
    if d.len() < 2 {
        return 0.0;
    }
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
    (var / d.len() as f64).sqrt()
}

fn fallback_violations(cells: &[FallbackCell], exits: &[usize], kappas: &[usize]) -> Vec<String> {
    let find = |e: usize, k: usize| cells.iter().find(|c| c.exit_layer == e && c.kappa == k).unwrap();
    let mut out = Vec::new();
    for &e in exits {
        for w in kappas.windows(2) {
            let (small, large) = (find(e, w[0]), find(e, w[1]));
            if let Some(i) = small.flags.iter().zip(&large.flags).position(|(s, l)| *l && !*s) {
                out.push(format!(
                    "exit {e}: corrected step {i} falls back at kappa {} but not at kappa {}",
                    w[1], w[0]
                ));
            }
        }
    }
    for &k in kappas {
        for w in exits.windows(2) {
            let (shallow, deep) = (find(w[0], k), find(w[1], k));
            let se = paired_stderr(&deep.flags, &shallow.flags);
            if deep.ff > shallow.ff + 3.0 * se {
                out.push(format!(
                    "kappa {k}: fallback rises from {:.4} at exit {} to {:.4} at exit {}",
                    shallow.ff, w[0], deep.ff, w[1]
                ));
            }
        }
    }
    for c in cells {
        if c.ff > 1.0 - c.omega + 3.0 * c.ff_stderr {
            out.push(format!(
                "exit {} kappa {}: fallback {:.4} exceeds 1 - omega = {:.4} by more than 3 standard errors ({:.4})",
                c.exit_layer,
                c.kappa,
                c.ff,
                1.0 - c.omega,
                c.ff_stderr
            ));
        }
    }
    out
}

/// One batch size: vanilla against mirror with streaming under the batching
/// policy.
#[derive(Debug, Clone, Serialize)]
pub struct BatchRow {
    pub batch: usize,
    pub kappa: usize,
    pub ss_streams: usize,
    pub vanilla: ExperimentResult,
    pub mirror: ExperimentResult,
    /// Mean exposed mirror draft time over mean vanilla draft time.
    pub draft_overhead: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BatchSweep {
    pub rows: Vec<BatchRow>,
    pub violations: Vec<String>,
}

pub fn sweep_batching(setup: &Setup, batches: &[usize], scaling: &BatchScaling) -> Result<BatchSweep> {
    if batches.is_empty() {
        return Err(invalid("batching sweep needs at least one batch size"));
    }
    let depth = setup.models.target.depth();
    let rows: Vec<BatchRow> = batches
        .par_iter()
        .map(|&batch| {
            let (kappa, streams) = batching_policy(batch)?;
            let decode = DecodeConfig { kappa, ..setup.decode.clone() };
            decode.validate(setup.models.target.vocab_size(), depth)?;
            let models = setup.models.clone().with_ss(SsSettings { streams, ..setup.models.ss });
            let results = run_sessions(setup, &models, &decode, &[Mode::Vanilla, Mode::MirrorSs], |mode| {
                batch_scale(&mode_params(mode, depth, &decode, &setup.latency)?, batch, scaling)
            })?;
            let [vanilla, mirror]: [ExperimentResult; 2] = results
                .try_into()
                .map_err(|_| Error::Property("batching cell lost a mode".into()))?;
            let draft_overhead = if vanilla.draft_gen_ms > 0.0 {
                mirror.exposed_draft_ms / vanilla.draft_gen_ms
            } else {
                0.0
            };
            Ok(BatchRow {
                batch,
                kappa,
                ss_streams: streams,
                vanilla,
                mirror,
                draft_overhead,
            })
        })
        .collect::<Result<_>>()?;

    let mut violations = Vec::new();
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.batch <= a.batch {
            continue;
        }
        for (name, x, y) in [
            ("vanilla", a.vanilla.speedup, b.vanilla.speedup),
            ("mirror", a.mirror.speedup, b.mirror.speedup),
        ] {
            if y > x {
                violations.push(format!(
                    "{name} speedup rises from {x:.4} at B={} to {y:.4} at B={}",
                    a.batch, b.batch
                ));
            }
        }
        if b.draft_overhead < a.draft_overhead {
            violations.push(format!(
                "draft overhead falls from {:.4} at B={} to {:.4} at B={}",
                a.draft_overhead, a.batch, b.draft_overhead, b.batch
            ));
        }
    }
    for r in &rows {
        if r.mirror.speedup <= r.vanilla.speedup {
            violations.push(format!(
                "mirror speedup {:.4} does not beat vanilla {:.4} at B={}",
                r.mirror.speedup, r.vanilla.speedup, r.batch
            ));
        }
    }
    Ok(BatchSweep { rows, violations })
}

/// Speedups of one session seed.
#[derive(Debug, Clone, Serialize)]
pub struct SeedSpeedups {
    pub seed: u64,
    pub speedups: BTreeMap<Mode, f64>,
    pub ordered: bool,
}

/// Four-mode comparison on matched seeds.
#[derive(Debug, Clone, Serialize)]
pub struct Bench {
    pub rows: Vec<ExperimentResult>,
    pub per_seed: Vec<SeedSpeedups>,
    /// mirror_ss >= mirror >= vanilla >= 1 for every seed and in aggregate.
    pub ordering_holds: bool,
}

/// mirror_ss >= mirror >= vanilla >= 1 over the modes present.
fn ordered(speedups: &BTreeMap<Mode, f64>) -> bool {
    let chain: Vec<f64> = [Mode::MirrorSs, Mode::Mirror, Mode::Vanilla]
        .iter()
        .filter_map(|m| speedups.get(m).copied())
        .chain([1.0])
        .collect();
    chain.windows(2).all(|w| w[0] >= w[1])
}

/// Runs every mode on every seed, reporting the speedup ordering per seed.
pub fn bench(setup: &Setup) -> Result<Bench> {
    let modes = Mode::ALL;
    let rows = run_experiment(setup, &modes)?;
    let per_seed = setup
        .sessions()?
        .par_iter()
        .map(|&seed| {
            let single = Setup { seeds: vec![seed], ..setup.clone() };
            let speedups: BTreeMap<Mode, f64> = run_experiment(&single, &modes)?
                .into_iter()
                .map(|r| (r.mode, r.speedup))
                .collect();
            Ok(SeedSpeedups {
                seed,
                ordered: ordered(&speedups),
                speedups,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate: BTreeMap<Mode, f64> = rows.iter().map(|r| (r.mode, r.speedup)).collect();
    let ordering_holds = ordered(&aggregate) && per_seed.iter().all(|s| s.ordered);
    Ok(Bench {
        rows,
        per_seed,
        ordering_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::tokens;
    use crate::models::{AlignedDraft, DraftLm, LayeredLm, SyntheticLayeredLm};
    use std::sync::Arc;

    fn setup(eps: f64, fidelity: f64, tokens_per_session: usize) -> Setup {
        let t: Arc<dyn LayeredLm> = Arc::new(SyntheticLayeredLm::new(8, 32, 3, eps, 4.0).unwrap());
        let d: Arc<dyn DraftLm> = Arc::new(AlignedDraft::new(t.clone(), fidelity, 4).unwrap());
        Setup {
            models: Models::new(t, d).unwrap(),
            prompt: tokens(&[1, 2, 3]),
            decode: DecodeConfig {
                max_new_tokens: tokens_per_session,
                temperature: 1.0,
                ..Default::default()
            },
            latency: LatencyParams::default(),
            seeds: vec![0, 1],
        }
    }

    #[test]
    fn experiment_is_reproducible() {
        let s = setup(0.5, 0.7, 40);
        let a = run_experiment(&s, &Mode::ALL).unwrap();
        let b = run_experiment(&s, &Mode::ALL).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].speedup, 1.0);
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn fallback_cells_are_paired_and_monotone_in_kappa() {
        let s = setup(0.8, 0.6, 60);
        let sweep = sweep_fallback(&s, &[1, 2, 4], &[2, 4], 50).unwrap();
        assert!(sweep.corrected_steps >= 50);
        assert_eq!(sweep.cells.len(), 6);
        for c in &sweep.cells {
            assert_eq!(c.corrected_steps, sweep.corrected_steps);
            assert!((0.0..=1.0).contains(&c.omega));
        }
        for e in [2, 4] {
            let a = sweep.cell(e, 1).unwrap();
            let b = sweep.cell(e, 4).unwrap();
            assert!(b.ff <= a.ff);
            assert!(b.omega >= a.omega);
        }
        assert!(!sweep.violations.iter().any(|v| v.contains("falls back at kappa")));
    }

    #[test]
    fn fallback_sweep_rejects_bad_axes() {
        let s = setup(0.8, 0.6, 20);
        assert!(sweep_fallback(&s, &[], &[4], 10).is_err());
        assert!(sweep_fallback(&s, &[2], &[8], 10).is_err());
        assert!(sweep_fallback(&s, &[33], &[4], 10).is_err());
    }

    #[test]
    fn tri_sweep_flat_region() {
        let s = setup(0.5, 0.7, 40);
        let sweep = sweep_tri_objective(&s, &[1, 2, 3, 4], &[Mode::Vanilla, Mode::Mirror]).unwrap();
        assert_eq!(sweep.rows.len(), 8);
        assert!(sweep.violations.is_empty(), "{:?}", sweep.violations);
        assert_eq!(sweep.zero_slope_gamma[&Mode::Mirror], 4);
        assert!(sweep_tri_objective(&s, &[], &[Mode::Mirror]).is_err());
    }

    #[test]
    fn batching_rows_follow_policy() {
        let s = setup(0.5, 0.7, 30);
        let sweep = sweep_batching(&s, &[1, 16], &BatchScaling::default()).unwrap();
        assert_eq!(sweep.rows[0].kappa, 8);
        assert_eq!(sweep.rows[0].ss_streams, 2);
        assert_eq!(sweep.rows[1].kappa, 4);
        assert_eq!(sweep.rows[1].mirror.batch, 16);
        assert!(sweep_batching(&s, &[], &BatchScaling::default()).is_err());
    }
}
