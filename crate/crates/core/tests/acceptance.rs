//! Acceptance suite: one pass/fail line per criterion, non-zero exit if any
//! criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use mirror_sd::cli::ExperimentConfig;
use mirror_sd::config::DecodeConfig;
use mirror_sd::dist::{tokens, TokenId};
use mirror_sd::mirror::{mirror_decode, MirrorOptions};
use mirror_sd::models::{AlignedDraft, DraftLm, LayeredLm, SyntheticLayeredLm};
use mirror_sd::rng::Rng;
use mirror_sd::sd::{ar_decode, sd_decode, speculate_window, Autoregressive};
use mirror_sd::sim::{bench, sweep_batching, sweep_fallback, Mode, Models, Setup, StepTimeline};
use mirror_sd::ss::{ss_window, SsDraft};
use mirror_sd::timing::{
    allreduce_cost, draft_comm_cost, draft_gen_time, mirror_step_latency, target_comm_cost, time_saved_and_speedup,
    tree_time, vanilla_step_latency, LatencyParams, Rendezvous,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("{what} took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64())
    })
}

fn synthetic(eps0: f64, fidelity: f64) -> (Arc<dyn LayeredLm>, Arc<dyn DraftLm>) {
    let t: Arc<dyn LayeredLm> = Arc::new(SyntheticLayeredLm::new(8, 32, 0, eps0, 4.0).unwrap());
    let d: Arc<dyn DraftLm> = Arc::new(AlignedDraft::new(t.clone(), fidelity, 1).unwrap());
    (t, d)
}

fn lossless() -> Outcome {
    let start = Instant::now();
    let (t, d) = synthetic(0.5, 0.7);
    let ar = Autoregressive(d.clone());
    let ss = SsDraft::new(d.clone(), 3, 0.7).map_err(|e| e.to_string())?;
    let prompt = tokens(&[1, 2, 3]);
    let mut checked = 0;
    for temperature in [0.0, 1.0] {
        for seed in 0..10 {
            let cfg = DecodeConfig { temperature, seed, max_new_tokens: 200, ..Default::default() };
            let reference = ar_decode(t.as_ref(), &prompt, &cfg).map_err(|e| e.to_string())?;
            let outputs = [
                ("vanilla", sd_decode(t.as_ref(), &ar, &prompt, &cfg)),
                ("mirror", mirror_decode(t.as_ref(), &ar, &prompt, &cfg, MirrorOptions::default())),
                ("mirror_ss", mirror_decode(t.as_ref(), &ss, &prompt, &cfg, MirrorOptions::default())),
            ];
            for (name, run) in outputs {
                let run = run.map_err(|e| e.to_string())?;
                ensure(run.generated == reference, || format!("{name} diverges at temp {temperature} seed {seed}"))?;
            }
            ensure(reference.len() == 200, || format!("only {} tokens", reference.len()))?;
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, 5.0, "losslessness runs")?;
    Ok(format!("{checked} sessions x 4 modes identical, {:.2} s", elapsed.as_secs_f64()))
}

fn coupling() -> Outcome {
    let (t, d) = synthetic(0.5, 0.7);
    let ar = Autoregressive(d);
    let prompt = tokens(&[4, 5]);
    let mut total = 0;
    for temperature in [0.0, 1.0] {
        for seed in 0..5 {
            // Enough tokens for 500 steps even if every window is accepted.
            let cfg = DecodeConfig { temperature, seed, max_new_tokens: 500 * 8, ..Default::default() };
            let vanilla = sd_decode(t.as_ref(), &ar, &prompt, &cfg).map_err(|e| e.to_string())?;
            let forced = mirror_decode(t.as_ref(), &ar, &prompt, &cfg, MirrorOptions { force_fallback: true })
                .map_err(|e| e.to_string())?;
            let a: Vec<usize> = vanilla.results.iter().map(|r| r.accepted_len).collect();
            let b: Vec<usize> = forced.results.iter().map(|r| r.accepted_len).collect();
            ensure(a.len() >= 500, || format!("only {} steps at seed {seed}", a.len()))?;
            ensure(a == b, || {
                let i = a.iter().zip(&b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
                format!("A_t traces differ at step {i}, temp {temperature} seed {seed}")
            })?;
            total += a.len();
        }
    }
    Ok(format!("{total} steps over 5 seeds at temp 0 and 1, traces identical"))
}

fn fallback_setup(eps0: f64, temperature: f64) -> Setup {
    let (t, d) = synthetic(eps0, 0.7);
    Setup {
        models: Models::new(t, d).unwrap(),
        prompt: tokens(&[1, 2, 3]),
        decode: DecodeConfig { temperature, ..Default::default() },
        latency: LatencyParams::default(),
        seeds: (0..10).collect(),
    }
}

fn kappa_monotone() -> Outcome {
    let kappas = [1, 2, 4, 8, 16];
    let mut summary = Vec::new();
    for temperature in [0.0, 1.0] {
        let sweep = sweep_fallback(&fallback_setup(0.5, temperature), &kappas, &[4], 1000).map_err(|e| e.to_string())?;
        let cells: Vec<_> = kappas.iter().map(|&k| sweep.cell(4, k).unwrap()).collect();
        ensure(cells[0].flags.len() >= 1000, || format!("only {} corrected steps", cells[0].flags.len()))?;
        for w in cells.windows(2) {
            if let Some(i) = w[0].flags.iter().zip(&w[1].flags).position(|(narrow, wide)| *wide && !*narrow) {
                return Err(format!(
                    "temp {temperature}: step {i} falls back at kappa {} but not at kappa {}",
                    w[1].kappa, w[0].kappa
                ));
            }
        }
        let ffs: Vec<String> = cells.iter().map(|c| format!("{:.3}", c.ff)).collect();
        summary.push(format!("temp {temperature}: {} steps, FF {}", cells[0].flags.len(), ffs.join(" >= ")));
    }
    Ok(summary.join("; "))
}

fn exit_depth() -> Outcome {
    let start = Instant::now();
    let exits = [2, 4, 6];
    let sweep = sweep_fallback(&fallback_setup(0.8, 1.0), &[8], &exits, 2000).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let cells: Vec<_> = exits.iter().map(|&e| sweep.cell(e, 8).unwrap()).collect();
    let report: Vec<String> = cells
        .iter()
        .map(|c| {
            format!(
                "exit {}: FF {:.4} +- {:.4}, 1 - omega {:.4}",
                c.exit_layer, c.ff, c.ff_stderr, 1.0 - c.omega
            )
        })
        .collect();
    let report = format!("{} corrected steps; {}", sweep.corrected_steps, report.join("; "));
    let mut failures = Vec::new();
    if sweep.corrected_steps < 2000 {
        failures.push(format!("only {} corrected steps", sweep.corrected_steps));
    }
    if let Some(w) = cells.windows(2).find(|w| w[1].ff > w[0].ff) {
        failures.push(format!("FF rises from exit {} to exit {}", w[0].exit_layer, w[1].exit_layer));
    }
    for c in &cells {
        if c.ff > 1.0 - c.omega + 3.0 * c.ff_stderr {
            failures.push(format!("exit {} exceeds 1 - omega by more than 3 SE", c.exit_layer));
        }
    }
    if let Err(e) = within(elapsed, 30.0, "fallback sweep") {
        failures.push(e);
    }
    if failures.is_empty() {
        Ok(format!("{report}, {:.2} s", elapsed.as_secs_f64()))
    } else {
        Err(format!("{}; {report}", failures.join("; ")))
    }
}

fn random_params(rng: &mut Rng) -> (LatencyParams, usize, Vec<usize>) {
    let n = 2 + (rng.uniform() * 14.0) as usize;
    let kappa = 1 + (rng.uniform() * 16.0) as usize;
    let p = LatencyParams {
        layer_compute: (0..n).map(|_| rng.uniform() * 3.0).collect(),
        exit_layer: 1 + (rng.uniform() * (n - 1) as f64) as usize,
        draft_step_compute: rng.uniform() * 2.0,
        draft_step_sync: rng.uniform() * 0.3,
        tree_step_compute: Some(rng.uniform() * 2.0),
        rv_ee: Rendezvous { sample: rng.uniform(), transfer_per_item: rng.uniform() * 0.01 },
        rv_fv: Rendezvous { sample: rng.uniform(), transfer_per_item: rng.uniform() * 0.01 },
        alpha: rng.uniform() * 0.05,
        beta: rng.uniform() * 1e-5,
        batch: 1 + (rng.uniform() * 8.0) as usize,
        gamma: 1 + (rng.uniform() * 12.0) as usize,
        kappa,
        branch_parallelism: if rng.uniform() < 0.5 { None } else { Some(1 + (rng.uniform() * 4.0) as usize) },
        ..LatencyParams::default()
    };
    let window = (rng.uniform() * 12.0) as usize;
    let tree = (0..kappa).map(|_| (rng.uniform() * 12.0) as usize).collect();
    (p, window, tree)
}

fn latency_law() -> Outcome {
    let mut rng = Rng::new(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (p, window, tree) = random_params(&mut rng);
        p.validate().map_err(|e| format!("case {case}: {e}"))?;
        let dg = draft_gen_time(&p, window) + tree_time(&p, &tree);
        let mirror = StepTimeline::mirror(&p, 0.0, window, &tree).total() - mirror_step_latency(&p, dg).total;
        let vanilla = StepTimeline::vanilla(&p, 0.0, window).total() - vanilla_step_latency(&p, draft_gen_time(&p, window));
        worst = worst.max(mirror.abs()).max(vanilla.abs());
        ensure(mirror.abs() <= 1e-9 && vanilla.abs() <= 1e-9, || {
            format!("case {case}: timeline off by {mirror:e} (mirror) {vanilla:e} (vanilla)")
        })?;

        let delta = p.overlap_budget();
        let at = mirror_step_latency(&p, delta).total;
        let hidden = mirror_step_latency(&p, 0.0).total;
        let below = mirror_step_latency(&p, delta * (1.0 - 1e-12)).total;
        let above = mirror_step_latency(&p, delta * (1.0 + 1e-12)).total;
        let tol = 1e-9 * at.max(1.0);
        ensure((at - hidden).abs() <= tol && (below - at).abs() <= tol && (above - at).abs() <= tol, || {
            format!("case {case}: discontinuity at draft_gen = delta ({below}, {at}, {above})")
        })?;
    }
    Ok(format!("100 cases, worst timeline error {worst:.1e} ms, continuous at the boundary"))
}

fn zero_slope() -> Outcome {
    let mut p = LatencyParams::unit_layers(8, 4, 0.1);
    p.draft_step_compute = 0.5;
    p.draft_step_sync = 0.0;
    let (_, d) = synthetic(0.5, 0.7);
    let ss = SsDraft::new(d.clone(), 3, 1.0).map_err(|e| e.to_string())?;
    let ctx = tokens(&[1, 2, 3]);
    let mut summary = Vec::new();
    for (name, ss_mode) in [("ar", false), ("ss", true)] {
        let mut flat: Option<f64> = None;
        let mut prev_mirror = f64::NEG_INFINITY;
        let mut prev_vanilla = f64::NEG_INFINITY;
        let mut widest = 0;
        for gamma in 1..=40 {
            let window = if ss_mode {
                ss_window(&ss, &ctx, gamma, 1.0, &mut Rng::new(gamma as u64))
            } else {
                speculate_window(d.as_ref(), &ctx, gamma, 1.0, &mut Rng::new(gamma as u64))
            };
            let j = window.draft_steps;
            let dg = draft_gen_time(&p, j);
            let mirror = StepTimeline::mirror(&p, 0.0, j, &[]).total();
            let vanilla = vanilla_step_latency(&p, draft_gen_time(&p, gamma));
            if j as f64 * 0.5 <= 4.0 {
                widest = gamma;
                match flat {
                    None => flat = Some(mirror),
                    Some(f) => ensure(mirror.to_bits() == f.to_bits(), || {
                        format!("{name}: mirror latency {mirror} at gamma {gamma} differs from {f} inside the budget")
                    })?,
                }
            } else {
                ensure(dg > p.overlap_budget(), || format!("{name}: budget mismatch at gamma {gamma}"))?;
                // Streaming windows share J across several gammas, so only AR
                // windows rise at every step.
                let rising = if ss_mode { mirror >= prev_mirror } else { mirror > prev_mirror };
                ensure(rising, || format!("{name}: mirror latency not increasing at gamma {gamma}"))?;
            }
            ensure(vanilla > prev_vanilla, || format!("{name}: vanilla latency not increasing at gamma {gamma}"))?;
            prev_mirror = mirror;
            prev_vanilla = vanilla;
        }
        summary.push((name, widest));
    }
    ensure(summary[1].1 > summary[0].1, || format!("streaming flat region {:?} not wider", summary))?;
    Ok(format!(
        "mirror flat through gamma {} (ar) and {} (ss), rising beyond; vanilla rising throughout",
        summary[0].1, summary[1].1
    ))
}

fn work_conservation() -> Outcome {
    let t: Arc<dyn LayeredLm> = Arc::new(SyntheticLayeredLm::new(4, 8, 3, 0.5, 4.0).unwrap());
    let d: Arc<dyn DraftLm> = Arc::new(AlignedDraft::new(t, 0.5, 4).unwrap());
    let violations: usize = (0..100_000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::new(i);
            let streams = 1 + (rng.uniform() * 5.0) as usize;
            let keep: Vec<f64> = (0..streams).map(|_| rng.uniform()).collect();
            let gamma = 1 + (rng.uniform() * 16.0) as usize;
            let ss = SsDraft::with_profile(d.clone(), keep).unwrap();
            let ctx = tokens(&[(i % 8) as u32]);
            let w = ss_window(&ss, &ctx, gamma, 1.0, &mut rng);
            let bound = (gamma as f64 / w.eta_bar).ceil() as usize;
            usize::from(w.tokens.len() != gamma || w.draft_steps > bound)
        })
        .sum();
    ensure(violations == 0, || format!("{violations} windows break J <= ceil(gamma / eta)"))?;

    let plain = SsDraft::new(d.clone(), 1, 0.0).map_err(|e| e.to_string())?;
    for i in 0..1000u64 {
        let ctx: Vec<TokenId> = tokens(&[(i % 8) as u32, (i / 8 % 8) as u32]);
        let gamma = 1 + (i % 12) as usize;
        let temperature = if i % 2 == 0 { 0.0 } else { 1.0 };
        let a = ss_window(&plain, &ctx, gamma, temperature, &mut Rng::new(i));
        let b = speculate_window(d.as_ref(), &ctx, gamma, temperature, &mut Rng::new(i));
        ensure(a == b, || format!("single stream window {i} differs from plain drafting"))?;
    }
    Ok("1e5 windows within the bound; 1000 single-stream windows equal plain drafting".into())
}

fn golden_values() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    let allreduce = allreduce_cost(3.0, 8, 1.0, 2.0);
    ensure(allreduce == 9.0, || format!("allreduce(3, 8, 1, 2) = {allreduce}"))?;
    let p = LatencyParams { hidden_target: 64, alpha: 0.01, beta: 0.001, ..LatencyParams::default() };
    let target = target_comm_cost(&p, 8);
    ensure(close(target, 0.608), || format!("target_comm = {target}"))?;
    let p = LatencyParams {
        hidden_draft: 32,
        gamma: 2,
        kappa: 2,
        alpha: 0.5,
        beta: 0.25,
        draft_group: 4,
        ..LatencyParams::default()
    };
    let draft = draft_comm_cost(&p, 3);
    ensure(close(draft, 54.0), || format!("draft_comm = {draft}"))?;
    let mut p = LatencyParams::unit_layers(8, 4, 0.1);
    p.draft_step_compute = 1.0;
    p.draft_step_sync = 0.2;
    let gen = draft_gen_time(&p, 3);
    ensure(close(gen, 3.6), || format!("draft_gen = {gen}"))?;
    Ok(format!("allreduce {allreduce}, target_comm {target}, draft_comm {draft}, draft_gen {gen}"))
}

fn piecewise_speedup() -> Outcome {
    let p = LatencyParams::unit_layers(8, 4, 0.1);
    let (saved, s) = time_saved_and_speedup(&p, 3.0);
    ensure((saved - 2.8).abs() < 1e-12 && (s - 11.0 / 8.2).abs() < 1e-12, || {
        format!("worked example gives saved {saved}, S {s}")
    })?;
    // Dyadic costs keep the break-even sums exact.
    for (dg, rv_each) in [(3.0, 1.5), (6.0, 2.0), (1.0, 0.5), (2.5, 1.25), (4.0, 2.0)] {
        let p = LatencyParams::unit_layers(8, 4, rv_each);
        ensure(p.rv_total() == f64::min(p.overlap_budget(), dg), || "break-even setup".into())?;
        let (saved, s) = time_saved_and_speedup(&p, dg);
        ensure(saved == 0.0 && s == 1.0, || format!("draft_gen {dg}, T_rv {}: S = {s}", p.rv_total()))?;
        for (nudge, above) in [(-0.25, true), (0.25, false)] {
            let q = LatencyParams::unit_layers(8, 4, rv_each + nudge);
            let (_, s) = time_saved_and_speedup(&q, dg);
            ensure((s > 1.0) == above, || format!("draft_gen {dg}, T_rv {}: S = {s}", q.rv_total()))?;
        }
    }
    Ok(format!("saved {saved:.12}, S {s:.12}; S = 1 exactly at T_rv = min(delta, draft_gen)"))
}

fn paper_scale_substitute() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let built = cfg.build().map_err(|e| e.to_string())?;
    let b = bench(&built.setup).map_err(|e| e.to_string())?;
    let sweep = sweep_batching(&built.setup, &cfg.sweep.batches, &cfg.batch_scaling).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let speed = |m: Mode| b.rows.iter().find(|r| r.mode == m).map_or(f64::NAN, |r| r.speedup);
    let mut failures = Vec::new();
    for s in b.per_seed.iter().filter(|s| !s.ordered) {
        failures.push(format!("seed {} breaks the ordering", s.seed));
    }
    if !b.ordering_holds {
        failures.push("aggregate ordering fails".into());
    }
    failures.extend(sweep.violations.iter().cloned());
    if let Err(e) = within(elapsed, 60.0, "bench and batching sweep") {
        failures.push(e);
    }
    let curve: Vec<String> = sweep
        .rows
        .iter()
        .map(|r| format!("B={} {:.3}/{:.3}", r.batch, r.vanilla.speedup, r.mirror.speedup))
        .collect();
    let report = format!(
        "speedups vanilla {:.3}, mirror {:.3}, mirror_ss {:.3} over {} seeds; batching vanilla/mirror_ss {}",
        speed(Mode::Vanilla),
        speed(Mode::Mirror),
        speed(Mode::MirrorSs),
        b.per_seed.len(),
        curve.join(", ")
    );
    if failures.is_empty() {
        Ok(format!("{report}, {:.2} s", elapsed.as_secs_f64()))
    } else {
        Err(format!("{}; {report}", failures.join("; ")))
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let commands: [(&[&str], &str); 5] = [
        (&["decode", "--set", "decode.temperature=1"], "decode.csv"),
        (&["bench", "--set", "decode.temperature=1"], "bench.csv"),
        (&["sweep", "tri", "--set", "decode.temperature=1"], "tri.csv"),
        (&["sweep", "fallback", "--set", "sweep.min_corrected_steps=500"], "fallback.csv"),
        (&["sweep", "batching", "--set", "decode.temperature=1"], "batching.csv"),
    ];
    for (args, file) in commands {
        let mut outputs = Vec::new();
        for run in ["first", "second"] {
            let out = dir.path().join(format!("{}-{run}", args[..2].join("-")));
            let status = Command::new(env!("CARGO_BIN_EXE_mirror-sd"))
                .args(args)
                .args(["--seed", "7", "--out"])
                .arg(&out)
                .env_remove("MIRROR_SD_OUT")
                .output()
                .map_err(|e| e.to_string())?;
            let code = status.status.code().unwrap_or(-1);
            ensure(code == 0 || code == 4, || {
                format!("{args:?} exited {code}: {}", String::from_utf8_lossy(&status.stderr))
            })?;
            outputs.push((code, read(&out.join(file))?));
        }
        ensure(outputs[0] == outputs[1], || format!("{args:?} output differs between runs"))?;
    }
    Ok("decode, bench and three sweeps reproduce byte-identical CSV".into())
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("losslessness", lossless),
        ("acceptance-law coupling", coupling),
        ("fallback monotone in kappa", kappa_monotone),
        ("fallback against exit depth", exit_depth),
        ("latency law", latency_law),
        ("zero-slope region", zero_slope),
        ("streaming work conservation", work_conservation),
        ("communication golden values", golden_values),
        ("piecewise speedup", piecewise_speedup),
        ("desk-scale ordering and batching shape", paper_scale_substitute),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
