//! Command-line front end.
//!
//! Every command reads an optional JSON config, applies `--set key=value`
//! overrides by dotted path, validates the result and writes CSV and JSON
//! files to the output directory.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | runtime error |
//! | 2 | usage or config error |
//! | 3 | losslessness violation |
//! | 4 | property violation (outputs are still written) |

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::DecodeConfig;
use crate::dist::TokenId;
use crate::error::{Error, Result};
use crate::models::text::{load_corpus, Tokenizer};
use crate::models::{fit_ngram, AlignedDraft, DraftLm, LayeredLm, ProxyLayers, SyntheticLayeredLm};
use crate::sim::{
    batching_rows, bench, check_lossless, fallback_rows, mode_params, run_mode, sweep_batching, sweep_fallback,
    sweep_tri_objective, timelines, write_csv, write_json, CsvRow, ExperimentResult, Mode, ModeRun, Models,
    Setup, SsSettings, StepTimeline,
};
use crate::timing::{BatchScaling, LatencyParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_LOSSLESS: i32 = 3;
pub const EXIT_PROPERTY: i32 = 4;

/// Environment variable naming the output directory when neither `--out`
/// nor `output.dir` is given.
pub const OUT_ENV: &str = "MIRROR_SD_OUT";
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Parser)]
#[command(name = "mirror-sd", version, about = "Mirror speculative decoding on toy models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run a single session with this sampling seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads for sessions and sweep cells.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Print only a machine-readable JSON summary.
    #[arg(long, global = true)]
    pub json: bool,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. `decode.gamma=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode one prompt in each configured mode and check losslessness.
    Decode,
    /// Sweep one experiment axis.
    Sweep {
        #[arg(value_enum)]
        kind: SweepKind,
    },
    /// Compare all four modes on matched seeds.
    Bench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    /// Window length against acceptance and latency.
    Tri,
    /// Fallback frequency over Top-κ width and exit depth.
    Fallback,
    /// Speedup and draft overhead over batch size.
    Batching,
}

impl SweepKind {
    fn name(self) -> &'static str {
        match self {
            SweepKind::Tri => "tri",
            SweepKind::Fallback => "fallback",
            SweepKind::Batching => "batching",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub prompt: PromptConfig,
    pub decode: DecodeConfig,
    pub latency: LatencyParams,
    pub ss: SsSettings,
    pub batch_scaling: BatchScaling,
    pub modes: Vec<Mode>,
    pub sweep: SweepAxes,
    /// Session seeds; each session decodes the prompt once per mode.
    pub seeds: Vec<u64>,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::Synthetic(SyntheticModel::default()),
            prompt: PromptConfig::default(),
            decode: DecodeConfig::default(),
            latency: LatencyParams::default(),
            ss: SsSettings::default(),
            batch_scaling: BatchScaling::default(),
            modes: Mode::ALL.to_vec(),
            sweep: SweepAxes::default(),
            seeds: (0..10).collect(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelConfig {
    Synthetic(SyntheticModel),
    Ngram(NgramModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticModel {
    pub depth: usize,
    pub vocab: usize,
    pub seed: u64,
    pub epsilon0: f64,
    pub sharpness: f64,
    pub draft: DraftConfig,
}

impl Default for SyntheticModel {
    fn default() -> Self {
        Self {
            depth: 8,
            vocab: 32,
            seed: 0,
            epsilon0: 0.5,
            sharpness: SyntheticLayeredLm::DEFAULT_SHARPNESS,
            draft: DraftConfig::default(),
        }
    }
}

/// Target fitted on a text corpus; relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NgramModel {
    pub corpus: PathBuf,
    /// One word per line; byte tokens when omitted.
    #[serde(default)]
    pub vocab_file: Option<PathBuf>,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_add_k")]
    pub add_k: f64,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_epsilon0")]
    pub epsilon0: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub draft: DraftConfig,
}

fn default_order() -> usize {
    3
}

fn default_add_k() -> f64 {
    0.1
}

fn default_depth() -> usize {
    8
}

fn default_epsilon0() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DraftConfig {
    /// Mixture of the target's final distribution and seeded noise.
    Aligned {
        #[serde(default = "default_fidelity")]
        fidelity: f64,
        #[serde(default = "default_draft_seed")]
        seed: u64,
    },
    /// A lower-order n-gram on the same corpus (ngram family only).
    Ngram {
        #[serde(default = "default_draft_order")]
        order: usize,
        #[serde(default = "default_add_k")]
        add_k: f64,
    },
}

fn default_fidelity() -> f64 {
    0.7
}

fn default_draft_seed() -> u64 {
    1
}

fn default_draft_order() -> usize {
    2
}

impl Default for DraftConfig {
    fn default() -> Self {
        DraftConfig::Aligned {
            fidelity: default_fidelity(),
            seed: default_draft_seed(),
        }
    }
}

/// Prompt as raw token ids, or as text when `text` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub tokens: Vec<u32>,
    pub text: Option<String>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            tokens: vec![1, 2, 3],
            text: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub gammas: Vec<usize>,
    pub kappas: Vec<usize>,
    /// `None` means {N/4, N/2, 3N/4}.
    pub exits: Option<Vec<usize>>,
    pub batches: Vec<usize>,
    pub min_corrected_steps: usize,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            gammas: (1..=16).collect(),
            kappas: vec![1, 2, 4, 8, 16],
            exits: None,
            batches: vec![1, 8, 16, 32, 64],
            min_corrected_steps: 2000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Merges `patch` into `base`. Objects merge key by key, except that an
/// object whose `family` or `kind` tag changes is replaced whole.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let retagged = ["family", "kind"]
                .iter()
                .any(|t| p.get(*t).is_some_and(|v| b.get(*t) != Some(v)));
            if retagged {
                *b = p;
                return;
            }
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Applies one `a.b.c=value` override. The value is parsed as JSON when
/// possible and taken as a string otherwise.
fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {spec:?} is not KEY=VALUE")))?;
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(config_err(format!("override key {path:?} is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = root;
    for key in path.split('.') {
        if !slot.is_object() {
            *slot = Value::Object(Map::new());
        }
        slot = slot
            .as_object_mut()
            .expect("slot was just made an object")
            .entry(key)
            .or_insert(Value::Null);
    }
    let mut patch = Value::Null;
    std::mem::swap(slot, &mut patch);
    merge(&mut patch, value);
    *slot = patch;
    Ok(())
}

impl ExperimentConfig {
    /// Defaults, then the file, then each override in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root = serde_json::to_value(Self::default()).map_err(config_err)?;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
            let file: Value =
                serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
            if !file.is_object() {
                return Err(config_err(format!("{}: top level must be an object", path.display())));
            }
            merge(&mut root, file);
        }
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let mut cfg: Self = serde_json::from_value(root).map_err(config_err)?;
        if let Some(dir) = path.and_then(Path::parent) {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let ModelConfig::Ngram(m) = &mut self.model {
            for p in std::iter::once(&mut m.corpus).chain(m.vocab_file.as_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match &self.model {
            ModelConfig::Synthetic(m) => m.depth,
            ModelConfig::Ngram(m) => m.depth,
        }
    }

    /// Exit layers of the fallback sweep.
    pub fn exits(&self) -> Vec<usize> {
        self.sweep.exits.clone().unwrap_or_else(|| {
            let n = self.depth();
            let mut e = vec![(n / 4).max(1), (n / 2).max(1), (3 * n / 4).max(1)];
            e.dedup();
            e
        })
    }

    /// Builds models and prompt and checks every field against them.
    pub fn build(&self) -> Result<Built> {
        let (models, tokenizer) = self.build_models().map_err(as_config)?;
        let models = models.with_ss(self.ss);
        let target = models.target.as_ref();
        let (vocab, depth) = (target.vocab_size(), target.depth());
        self.decode.validate(vocab, depth).map_err(as_config)?;
        mode_params(Mode::Mirror, depth, &self.decode, &self.latency).map_err(as_config)?;
        models.drafter(Mode::MirrorSs).map_err(as_config)?;
        if self.modes.is_empty() {
            return Err(config_err("modes must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds must not be empty"));
        }
        let prompt = match (&self.prompt.text, &tokenizer) {
            (Some(text), Some(tok)) => tok.encode(text).map_err(as_config)?,
            (Some(_), None) => return Err(config_err("prompt.text needs the ngram model family")),
            (None, _) => self.prompt.tokens.iter().map(|&t| TokenId(t)).collect(),
        };
        if prompt.is_empty() {
            return Err(config_err("prompt must not be empty"));
        }
        if let Some(t) = prompt.iter().find(|t| t.index() >= vocab) {
            return Err(config_err(format!("prompt token {t} outside vocabulary of {vocab}")));
        }
        Ok(Built {
            setup: Setup {
                models,
                prompt,
                decode: self.decode.clone(),
                latency: self.latency.clone(),
                seeds: self.seeds.clone(),
            },
            tokenizer,
        })
    }

    fn build_models(&self) -> Result<(Models, Option<Tokenizer>)> {
        match &self.model {
            ModelConfig::Synthetic(m) => {
                let target: Arc<dyn LayeredLm> =
                    Arc::new(SyntheticLayeredLm::new(m.depth, m.vocab, m.seed, m.epsilon0, m.sharpness)?);
                let draft: Arc<dyn DraftLm> = match m.draft {
                    DraftConfig::Aligned { fidelity, seed } => Arc::new(AlignedDraft::new(target.clone(), fidelity, seed)?),
                    DraftConfig::Ngram { .. } => return Err(config_err("an ngram draft needs the ngram model family")),
                };
                Ok((Models::new(target, draft)?, None))
            }
            ModelConfig::Ngram(m) => {
                let tokenizer = match &m.vocab_file {
                    Some(p) => Tokenizer::from_vocab_file(p)?,
                    None => Tokenizer::Bytes,
                };
                let corpus = load_corpus(&m.corpus, &tokenizer)?;
                let vocab = tokenizer.vocab_size();
                let base = fit_ngram(&corpus, m.order, m.add_k, vocab)?;
                let target: Arc<dyn LayeredLm> = Arc::new(ProxyLayers::new(base, m.depth, m.epsilon0, m.seed)?);
                let draft: Arc<dyn DraftLm> = match m.draft {
                    DraftConfig::Aligned { fidelity, seed } => Arc::new(AlignedDraft::new(target.clone(), fidelity, seed)?),
                    DraftConfig::Ngram { order, add_k } => Arc::new(fit_ngram(&corpus, order, add_k, vocab)?),
                };
                Ok((Models::new(target, draft)?, Some(tokenizer)))
            }
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => config_err(other),
    }
}

/// A validated config turned into runnable pieces.
pub struct Built {
    pub setup: Setup,
    pub tokenizer: Option<Tokenizer>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Lossless { .. } => EXIT_LOSSLESS,
        Error::Property(_) => EXIT_PROPERTY,
        _ => EXIT_RUNTIME,
    }
}

/// Output directory: `--out`, then `output.dir`, then the environment, then
/// `out`.
pub fn output_dir(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    let mut cfg = ExperimentConfig::load(g.config.as_deref(), &g.overrides)?;
    if let Some(seed) = g.seed {
        cfg.decode.seed = seed;
        cfg.seeds = vec![seed];
    }
    if g.jobs == Some(0) {
        return Err(config_err("--jobs must be at least 1"));
    }
    let built = cfg.build()?;
    let out = output_dir(g.out.as_deref(), &cfg);
    let go = || match &cli.command {
        Command::Decode => cmd_decode(&cfg, &built, &out, g.json),
        Command::Sweep { kind } => cmd_sweep(*kind, &cfg, &built, &out, g.json),
        Command::Bench => cmd_bench(&built, &out, g.json),
    };
    match g.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(go),
        None => go(),
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn print_table(rows: &[CsvRow]) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{:<10} {:>4} {:>5} {:>5} {:>4} {:>8} {:>7} {:>7} {:>7} {:>9} {:>8}",
        "mode", "B", "gamma", "kappa", "exit", "accept", "rho", "ff", "omega", "step_ms", "speedup"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10} {:>4} {:>5} {:>5} {:>4} {:>8.3} {:>7.4} {:>7} {:>7} {:>9} {:>8}",
            r.mode,
            r.batch,
            r.gamma,
            r.kappa,
            r.exit_layer,
            r.mean_accept,
            r.rho,
            fmt_opt(r.ff),
            fmt_opt(r.omega),
            fmt_opt(r.step_ms),
            fmt_opt(r.speedup)
        );
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn report_violations(violations: &[String]) -> i32 {
    if violations.is_empty() {
        return EXIT_OK;
    }
    for v in violations {
        eprintln!("property violation: {v}");
    }
    EXIT_PROPERTY
}

#[derive(Serialize)]
struct DecodeModeSummary<'a> {
    mode: Mode,
    tokens: &'a [TokenId],
    text: Option<String>,
    result: ExperimentResult,
}

#[derive(Serialize)]
struct DecodeSummary<'a> {
    seed: u64,
    prompt: &'a [TokenId],
    modes: Vec<DecodeModeSummary<'a>>,
}

#[derive(Serialize)]
struct ModeTrace<'a> {
    mode: Mode,
    records: &'a [crate::sim::StepRecord],
    step_ms: &'a [f64],
}

#[derive(Serialize)]
struct ModeTimelines {
    mode: Mode,
    steps: Vec<StepTimeline>,
}

/// Tokens around the first divergence between `reference` and `output`.
fn diff_report(mode: Mode, reference: &[TokenId], output: &[TokenId]) -> String {
    let index = reference
        .iter()
        .zip(output)
        .position(|(a, b)| a != b)
        .unwrap_or(reference.len().min(output.len()));
    let lo = index.saturating_sub(3);
    let show = |s: &[TokenId]| {
        s[lo.min(s.len())..(index + 4).min(s.len())]
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    format!(
        "{mode} diverges from ar at token {index} (lengths {} vs {})\n  ar   [{lo}..]: {}\n  {mode} [{lo}..]: {}",
        reference.len(),
        output.len(),
        show(reference),
        show(output)
    )
}

fn cmd_decode(cfg: &ExperimentConfig, built: &Built, out: &Path, json: bool) -> Result<i32> {
    let setup = &built.setup;
    let depth = setup.models.target.depth();
    let decode = &setup.decode;
    let reference = run_mode(
        Mode::Ar,
        &setup.models,
        &setup.prompt,
        decode,
        &mode_params(Mode::Ar, depth, decode, &setup.latency)?,
    )?;
    let mut runs: Vec<ModeRun> = Vec::new();
    for &mode in &cfg.modes {
        let run = if mode == Mode::Ar {
            reference.clone()
        } else {
            run_mode(mode, &setup.models, &setup.prompt, decode, &mode_params(mode, depth, decode, &setup.latency)?)?
        };
        if let Err(e) = check_lossless(mode, &reference.generated, &run.generated) {
            eprintln!("{}", diff_report(mode, &reference.generated, &run.generated));
            return Err(e);
        }
        runs.push(run);
    }

    let results = runs
        .iter()
        .map(|r| ExperimentResult::from_runs(std::slice::from_ref(r), decode))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<CsvRow> = results.iter().map(CsvRow::from).collect();
    let summary = DecodeSummary {
        seed: decode.seed,
        prompt: &setup.prompt,
        modes: runs
            .iter()
            .zip(&results)
            .map(|(run, result)| DecodeModeSummary {
                mode: run.mode,
                tokens: &run.generated,
                text: built.tokenizer.as_ref().map(|t| t.decode(&run.generated)),
                result: result.clone(),
            })
            .collect(),
    };
    let traces: Vec<ModeTrace> = runs
        .iter()
        .map(|r| ModeTrace {
            mode: r.mode,
            records: &r.records,
            step_ms: &r.step_ms,
        })
        .collect();
    let tls: Vec<ModeTimelines> = runs
        .iter()
        .map(|r| ModeTimelines {
            mode: r.mode,
            steps: timelines(r),
        })
        .collect();

    prepare_out(out)?;
    write_csv(&out.join("decode.csv"), &rows)?;
    write_json(&out.join("decode.json"), &summary)?;
    write_json(&out.join("trace.json"), &traces)?;
    write_json(&out.join("timeline.json"), &tls)?;

    if json {
        print_json(&summary)?;
        return Ok(EXIT_OK);
    }
    let mut o = std::io::stdout().lock();
    let ids = |ts: &[TokenId]| ts.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
    writeln!(o, "prompt: {}", ids(&setup.prompt))?;
    for run in &runs {
        writeln!(o, "\n[{}] {} tokens in {} steps", run.mode, run.generated.len(), run.step_ms.len())?;
        writeln!(o, "tokens: {}", ids(&run.generated))?;
        if let Some(t) = &built.tokenizer {
            writeln!(o, "text: {}", t.decode(&run.generated))?;
        }
        if !run.records.is_empty() {
            writeln!(o, "{:>5} {:>6} {:>3} {:>3} {:>9} {:>8} {:>3} {:>9}", "step", "pos", "len", "A", "source", "reuse", "F", "step_ms")?;
            for (r, t) in run.records.iter().zip(&run.step_ms) {
                writeln!(
                    o,
                    "{:>5} {:>6} {:>3} {:>3} {:>9} {:>8} {:>3} {:>9.4}",
                    r.step,
                    r.position,
                    r.window_len,
                    r.accepted_len,
                    format!("{:?}", r.window_source).to_lowercase(),
                    r.reuse.map(|c| format!("{c:?}").to_lowercase()).unwrap_or_else(|| "-".into()),
                    r.fallback.map(|f| u8::from(f).to_string()).unwrap_or_else(|| "-".into()),
                    t
                )?;
            }
        }
    }
    drop(o);
    println!();
    print_table(&rows);
    println!("\nall {} modes match ar; wrote {}", runs.len(), out.display());
    Ok(EXIT_OK)
}

fn cmd_sweep(kind: SweepKind, cfg: &ExperimentConfig, built: &Built, out: &Path, json: bool) -> Result<i32> {
    let setup = &built.setup;
    let axes = &cfg.sweep;
    let (rows, violations, summary): (Vec<CsvRow>, Vec<String>, Value) = match kind {
        SweepKind::Tri => {
            if axes.gammas.is_empty() {
                return Err(config_err("sweep.gammas must not be empty"));
            }
            let s = sweep_tri_objective(setup, &axes.gammas, &cfg.modes)?;
            (s.rows.iter().map(CsvRow::from).collect(), s.violations.clone(), serde_json::to_value(&s)?)
        }
        SweepKind::Fallback => {
            let exits = cfg.exits();
            if axes.kappas.is_empty() || exits.is_empty() {
                return Err(config_err("sweep.kappas and sweep.exits must not be empty"));
            }
            let vocab = setup.models.target.vocab_size();
            if let Some(k) = axes.kappas.iter().find(|&&k| k < 1 || k > vocab) {
                return Err(config_err(format!("sweep kappa {k} outside [1, {vocab}]")));
            }
            let depth = setup.models.target.depth();
            if let Some(e) = exits.iter().find(|&&e| e < 1 || e >= depth) {
                return Err(config_err(format!("sweep exit {e} outside [1, {}]", depth - 1)));
            }
            let s = sweep_fallback(setup, &axes.kappas, &exits, axes.min_corrected_steps)?;
            (fallback_rows(&s, 1), s.violations.clone(), serde_json::to_value(&s)?)
        }
        SweepKind::Batching => {
            if axes.batches.is_empty() {
                return Err(config_err("sweep.batches must not be empty"));
            }
            if axes.batches.contains(&0) {
                return Err(config_err("sweep batch sizes must be at least 1"));
            }
            let s = sweep_batching(setup, &axes.batches, &cfg.batch_scaling)?;
            (batching_rows(&s), s.violations.clone(), serde_json::to_value(&s)?)
        }
    };
    prepare_out(out)?;
    let name = kind.name();
    write_csv(&out.join(format!("{name}.csv")), &rows)?;
    write_json(&out.join(format!("{name}.json")), &summary)?;
    if json {
        print_json(&summary)?;
    } else {
        print_table(&rows);
        println!("\nwrote {}", out.display());
    }
    Ok(report_violations(&violations))
}

fn cmd_bench(built: &Built, out: &Path, json: bool) -> Result<i32> {
    let b = bench(&built.setup)?;
    let rows: Vec<CsvRow> = b.rows.iter().map(CsvRow::from).collect();
    prepare_out(out)?;
    write_csv(&out.join("bench.csv"), &rows)?;
    write_json(&out.join("bench.json"), &b)?;
    if json {
        print_json(&b)?;
        return Ok(EXIT_OK);
    }
    print_table(&rows);
    println!();
    for s in &b.per_seed {
        let line: Vec<String> = s.speedups.iter().map(|(m, v)| format!("{m}={v:.4}")).collect();
        println!("seed {:>3}: {} {}", s.seed, line.join(" "), if s.ordered { "ordered" } else { "NOT ordered" });
    }
    println!(
        "\nordering mirror_ss >= mirror >= vanilla >= 1: {}",
        if b.ordering_holds { "holds" } else { "does not hold" }
    );
    println!("wrote {}", out.display());
    Ok(EXIT_OK)
}
