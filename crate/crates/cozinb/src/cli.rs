//! Command-line front end.
//!
//! Five subcommands cover the full lifecycle: `sample` draws a synthetic
//! corpus with saved ground truth, `fit` estimates a model and writes a
//! checkpoint plus per-epoch trace, `eval` scores a checkpoint on held-out
//! data, `transform` infers local state for new samples under frozen
//! globals, and `export-factors` dumps the factor tables.
//!
//! Configuration comes from an optional JSON file (unknown keys are
//! rejected) overridden by command-line flags. Exit codes: 0 success,
//! 1 configuration error, 2 data error, 3 numerical error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{self, CountMatrix, Format, HeldoutSplit, Vocab};
use crate::error::{Error, Result};
use crate::eval;
use crate::generative::{sample_corpus, HyperParams, Planted, SynthConfig};
use crate::inference::{self, CheckpointManifest, GlobalState, ModelFlags, Schedule};
use crate::kernel::Activation;
use crate::rng::RngPool;
use crate::store;

/// Environment variable consulted for the worker-thread count when
/// `--threads` is not given.
pub const THREADS_ENV: &str = "COZINB_THREADS";

// --- Run configuration ---

/// Complete run configuration: hyperparameters, schedule, switches, and
/// I/O locations. Every field has a default so a config file may name any
/// subset of keys; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Model priors and sizes.
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub eta0: f64,
    pub a0: f64,
    pub b0: f64,
    pub e0: f64,
    pub f0: f64,
    pub k: usize,
    pub d_h: usize,
    pub d_l: usize,
    /// Samples to draw (`sample` only).
    pub j: usize,
    /// Features to draw (`sample` only); fitting reads M off the corpus.
    pub m: usize,
    pub enc_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
    pub activation: Activation,
    // Optimization schedule.
    pub batch_size: usize,
    pub kappa: f64,
    pub tau0: f64,
    pub max_epochs: usize,
    pub tol: f64,
    pub patience: usize,
    pub local_iters: usize,
    pub local_tol: f64,
    pub validate: bool,
    // Switches.
    pub kernel: bool,
    pub kernel_sampling: bool,
    pub fix_selectors_on: bool,
    pub gradient_crt: bool,
    // I/O.
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub format: String,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub feature_blacklist: Vec<String>,
    // Synthesis extras.
    pub planted_factors: Option<usize>,
    pub target_mean_tml: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = HyperParams::default();
        let s = Schedule::default();
        let f = ModelFlags::default();
        RunConfig {
            a: h.a,
            b: h.b,
            alpha: h.alpha,
            eta0: h.eta0,
            a0: h.a0,
            b0: h.b0,
            e0: h.e0,
            f0: h.f0,
            k: h.k,
            d_h: h.d_h,
            d_l: h.d_l,
            j: h.j,
            m: h.m,
            enc_hidden: h.enc_hidden,
            dec_hidden: h.dec_hidden,
            activation: h.activation,
            batch_size: s.batch_size,
            kappa: s.kappa,
            tau0: s.tau0,
            max_epochs: s.max_epochs,
            tol: s.tol,
            patience: s.patience,
            local_iters: s.local_iters,
            local_tol: s.local_tol,
            validate: s.validate,
            kernel: f.kernel_enabled,
            kernel_sampling: f.kernel_sample,
            fix_selectors_on: f.fix_nu_one,
            gradient_crt: f.crt_gradient,
            data: None,
            labels: None,
            format: "triplet-tsv".to_string(),
            output: None,
            seed: 0,
            feature_blacklist: Vec::new(),
            planted_factors: None,
            target_mean_tml: 40.0,
        }
    }
}

impl RunConfig {
    /// Read a JSON config file. Unknown keys and malformed values are
    /// configuration errors; an unreadable file is a data error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            a: self.a,
            b: self.b,
            alpha: self.alpha,
            eta0: self.eta0,
            a0: self.a0,
            b0: self.b0,
            e0: self.e0,
            f0: self.f0,
            k: self.k,
            d_h: self.d_h,
            d_l: self.d_l,
            j: self.j,
            m: self.m,
            enc_hidden: self.enc_hidden.clone(),
            dec_hidden: self.dec_hidden.clone(),
            activation: self.activation,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            batch_size: self.batch_size,
            kappa: self.kappa,
            tau0: self.tau0,
            max_epochs: self.max_epochs,
            tol: self.tol,
            patience: self.patience,
            local_iters: self.local_iters,
            local_tol: self.local_tol,
            validate: self.validate,
        }
    }

    pub fn flags(&self) -> ModelFlags {
        ModelFlags {
            kernel_enabled: self.kernel,
            kernel_sample: self.kernel_sampling,
            fix_nu_one: self.fix_selectors_on,
            crt_gradient: self.gradient_crt,
            freeze_gradients: false,
        }
    }

    fn parse_format(&self) -> Result<Format> {
        self.format.parse()
    }
}

// --- Command line ---

#[derive(Debug, Parser)]
#[command(
    name = "cozinb",
    version,
    about = "Correlated zero-inflated negative binomial factor models \
             for sparse count matrices"
)]
struct Cli {
    /// Worker threads; falls back to COZINB_THREADS, then all cores.
    /// Results are identical for every thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to a count matrix and write a checkpoint.
    Fit(CommonArgs),
    /// Draw a synthetic corpus and save the generating state.
    Sample(SampleArgs),
    /// Score a checkpoint on held-out data and report factors.
    Eval(EvalArgs),
    /// Infer local state for new samples under a frozen checkpoint.
    Transform(TransformArgs),
    /// Write factor tables from a checkpoint.
    ExportFactors(ExportArgs),
}

/// Flags shared by `fit` and `sample`; every one overrides the matching
/// config-file key.
#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration (flags below override its keys).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input count matrix.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Optional sample-label TSV (sample_id TAB label).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Corpus encoding: triplet-tsv or matrix-market.
    #[arg(long)]
    format: Option<String>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Truncation level (number of factors).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Minibatch size; 0 means full batch.
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    local_iters: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Early-stopping tolerance on validation perplexity.
    #[arg(long)]
    tol: Option<f64>,
    /// Use the correlation kernel (on) or independent selectors (off).
    #[arg(long, value_parser = parse_switch)]
    kernel: Option<bool>,
    /// Sample kernel noise instead of using the deterministic mean head.
    #[arg(long, value_parser = parse_switch)]
    kernel_sampling: Option<bool>,
    /// Relax count-table means with gradient steps instead of the
    /// closed form.
    #[arg(long, value_parser = parse_switch)]
    gradient_crt: Option<bool>,
    /// Pin every selector to 1 (zero-inflation ablation).
    #[arg(long)]
    fix_selectors_on: bool,
    /// Comma-separated feature names to drop before fitting.
    #[arg(long, value_delimiter = ',')]
    blacklist: Vec<String>,
    /// Hold out a validation split during fitting.
    #[arg(long, value_parser = parse_switch)]
    validate: Option<bool>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of samples to draw.
    #[arg(long)]
    samples: Option<usize>,
    /// Number of features to draw.
    #[arg(long)]
    features: Option<usize>,
    /// Plant this many well-separated factors for recovery studies.
    #[arg(long)]
    planted: Option<usize>,
    /// Target mean token load for planted corpora.
    #[arg(long)]
    mean_tml: Option<f64>,
    /// Self-check: warn when the realized mean token load differs from
    /// this by more than 20 percent.
    #[arg(long)]
    expect_mean_tml: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint directory written by `fit`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus to score (defaults to re-evaluating the fit's own
    /// validation split when it matches the training data).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    output: PathBuf,
    /// Top features listed per factor.
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Re-split the corpus with this seed instead of rebuilding the
    /// fit's validation split.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Target fraction of held-out tokens when --split-seed is given.
    #[arg(long, default_value_t = 0.5)]
    heldout_fraction: f64,
}

#[derive(Debug, Args)]
struct TransformArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// New samples to project onto the fitted factors.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Optional corpus for usage and activity columns.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 10)]
    top: usize,
}

fn parse_switch(s: &str) -> std::result::Result<bool, String> {
    match s {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => Err(format!("expected on/off, got '{other}'")),
    }
}

/// Entry point used by the binary: parse `std::env::args`, run, return
/// the process exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Testable entry point over explicit arguments.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version land on stdout with success; real parse
            // failures are configuration errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("{e}");
        return e.exit_code();
    }
    let outcome = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Transform(args) => cmd_transform(args),
        Command::ExportFactors(args) => cmd_export_factors(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Pin the rayon pool size from `--threads` or the environment. The
/// pool is process-global, so only the first call takes effect; results
/// never depend on the thread count, only throughput does.
fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                Error::config(format!("{THREADS_ENV}='{v}' is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(Error::config("thread count must be >= 1"));
    }
    // A second initialization in the same process is a no-op.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Merge a config file (when given) with command-line overrides.
fn resolve_common(args: &CommonArgs) -> Result<RunConfig> {
    let mut rc = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &args.data {
        rc.data = Some(v.clone());
    }
    if let Some(v) = &args.labels {
        rc.labels = Some(v.clone());
    }
    if let Some(v) = &args.format {
        rc.format = v.clone();
    }
    if let Some(v) = &args.output {
        rc.output = Some(v.clone());
    }
    if let Some(v) = args.seed {
        rc.seed = v;
    }
    if let Some(v) = args.k {
        rc.k = v;
    }
    if let Some(v) = args.max_epochs {
        rc.max_epochs = v;
    }
    if let Some(v) = args.batch_size {
        rc.batch_size = v;
    }
    if let Some(v) = args.local_iters {
        rc.local_iters = v;
    }
    if let Some(v) = args.kappa {
        rc.kappa = v;
    }
    if let Some(v) = args.tol {
        rc.tol = v;
    }
    if let Some(v) = args.kernel {
        rc.kernel = v;
    }
    if let Some(v) = args.kernel_sampling {
        rc.kernel_sampling = v;
    }
    if let Some(v) = args.gradient_crt {
        rc.gradient_crt = v;
    }
    if args.fix_selectors_on {
        rc.fix_selectors_on = true;
    }
    if !args.blacklist.is_empty() {
        rc.feature_blacklist = args.blacklist.clone();
    }
    if let Some(v) = args.validate {
        rc.validate = v;
    }
    Ok(rc)
}

fn require_output(rc: &RunConfig) -> Result<PathBuf> {
    rc.output
        .clone()
        .ok_or_else(|| Error::config("an output directory is required (--output or config key 'output')"))
}

fn make_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Load, label, and blacklist-filter a corpus per the run config.
fn load_corpus(rc: &RunConfig) -> Result<(CountMatrix, Vocab)> {
    let path = rc
        .data
        .as_ref()
        .ok_or_else(|| Error::config("a data file is required (--data or config key 'data')"))?;
    let (mut corpus, mut vocab) = data::load_counts(path, rc.parse_format()?)?;
    if let Some(lp) = &rc.labels {
        corpus.attach_labels(&data::load_labels(lp)?);
    }
    if !rc.feature_blacklist.is_empty() {
        let (c, v) = data::remove_features(&corpus, &vocab, &rc.feature_blacklist)?;
        corpus = c;
        vocab = v;
    }
    Ok((corpus, vocab))
}

/// Remap a corpus onto a model's vocabulary by feature name. Features the
/// model has never seen are data errors; model features absent from the
/// corpus become zero columns.
fn align_to_vocab(corpus: &CountMatrix, from: &Vocab, to: &Vocab) -> Result<CountMatrix> {
    if from.entries() == to.entries() {
        return Ok(corpus.clone());
    }
    let mut remap = Vec::with_capacity(from.len());
    for name in from.entries() {
        let id = to.id(name).ok_or_else(|| {
            Error::data(format!("feature '{name}' is not in the model vocabulary"))
        })?;
        remap.push(id);
    }
    let rows: Vec<Vec<(usize, u32)>> = corpus
        .rows()
        .iter()
        .map(|row| row.iter().map(|&(c, n)| (remap[c], n)).collect())
        .collect();
    let mut out = CountMatrix::new(to.len(), rows, corpus.sample_ids().to_vec())?;
    let pairs: Vec<(String, String)> = corpus
        .sample_ids()
        .iter()
        .zip(corpus.labels())
        .filter_map(|(id, l)| l.as_ref().map(|l| (id.clone(), l.clone())))
        .collect();
    out.attach_labels(&pairs);
    Ok(out)
}

const VOCAB_FILE: &str = "vocab.tsv";

fn save_vocab(dir: &Path, vocab: &Vocab) -> Result<()> {
    let path = dir.join(VOCAB_FILE);
    let mut text = String::new();
    for entry in vocab.entries() {
        text.push_str(entry);
        text.push('\n');
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn load_vocab(dir: &Path) -> Result<Vocab> {
    let path = dir.join(VOCAB_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Vocab::new(text.lines().map(str::to_string).collect())
}

fn load_model(dir: &Path) -> Result<(GlobalState, CheckpointManifest, Vocab)> {
    let (globals, manifest) = inference::load_checkpoint(dir)?;
    let vocab = load_vocab(dir)?;
    Ok((globals, manifest, vocab))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// --- Subcommands ---

fn cmd_fit(args: CommonArgs) -> Result<()> {
    let rc = resolve_common(&args)?;
    let outdir = require_output(&rc)?;
    let (corpus, vocab) = load_corpus(&rc)?;
    let hyper = rc.hyper();
    let schedule = rc.schedule();

    let outcome = inference::fit(&corpus, &hyper, &schedule, rc.flags(), rc.seed)?;

    make_dir(&outdir)?;
    let ckpt = outdir.join("checkpoint");
    inference::save_checkpoint(
        &ckpt,
        &outcome.globals,
        &hyper,
        &schedule,
        rc.seed,
        outcome.epochs_run,
        outcome.stopped_early,
    )?;
    save_vocab(&ckpt, &vocab)?;
    store::write_json(&outdir.join("config.json"), &rc)?;

    let mut trace = String::from("epoch\telbo\tval_perplexity\n");
    for row in &outcome.trace {
        trace.push_str(&format!(
            "{}\t{:.17e}\t{:.17e}\n",
            row.epoch, row.elbo, row.val_perplexity
        ));
    }
    write_text(&outdir.join("trace.tsv"), &trace)?;

    let mut timing = String::from("epoch\twall_seconds\n");
    for (epoch, wall) in outcome.wall.iter().enumerate() {
        timing.push_str(&format!("{}\t{wall:.6}\n", epoch + 1));
    }
    write_text(&outdir.join("timing.tsv"), &timing)?;

    let last = outcome.trace.last();
    println!(
        "fit: {} samples x {} features, K = {}, {} epoch(s){}, objective {:.6e}",
        corpus.n_samples(),
        corpus.n_features(),
        hyper.k,
        outcome.epochs_run,
        if outcome.stopped_early { " (stopped early)" } else { "" },
        last.map_or(f64::NAN, |r| r.elbo),
    );
    if let Some(r) = last {
        if r.val_perplexity.is_finite() {
            println!("fit: validation perplexity {:.6}", r.val_perplexity);
        }
    }
    println!("fit: checkpoint at {}", ckpt.display());
    Ok(())
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let mut rc = resolve_common(&args.common)?;
    if let Some(v) = args.samples {
        rc.j = v;
    }
    if let Some(v) = args.features {
        rc.m = v;
    }
    if let Some(v) = args.planted {
        rc.planted_factors = Some(v);
    }
    if let Some(v) = args.mean_tml {
        rc.target_mean_tml = v;
    }
    let outdir = require_output(&rc)?;
    if rc.j == 0 || rc.m == 0 {
        return Err(Error::config(
            "sampling needs --samples and --features (or config keys 'j' and 'm') >= 1",
        ));
    }

    let mut cfg = SynthConfig::new(rc.hyper(), rc.seed);
    if let Some(k_star) = rc.planted_factors {
        cfg.planted = Some(Planted::new(k_star, rc.target_mean_tml));
    }
    let (corpus, vocab, truth) = sample_corpus(&cfg)?;

    make_dir(&outdir)?;
    let corpus_path = outdir.join(match rc.parse_format()? {
        Format::TripletTsv => "corpus.tsv",
        Format::MatrixMarket => "corpus.mtx",
    });
    data::save_counts(&corpus_path, rc.parse_format()?, &corpus, &vocab)?;
    truth.save(&outdir.join("truth"))?;
    store::write_json(&outdir.join("config.json"), &rc)?;

    let mean_tml =
        corpus.totals().iter().sum::<u64>() as f64 / corpus.n_samples() as f64;
    println!(
        "sample: {} samples x {} features, mean token load {mean_tml:.2}, corpus at {}",
        corpus.n_samples(),
        corpus.n_features(),
        corpus_path.display()
    );
    if let Some(expect) = args.expect_mean_tml {
        if (mean_tml - expect).abs() > 0.2 * expect.abs() {
            eprintln!(
                "warning: realized mean token load {mean_tml:.2} is more than 20% away \
                 from the expected {expect:.2}"
            );
        } else {
            println!("sample: mean token load within 20% of expected {expect:.2}");
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (globals, manifest, model_vocab) = load_model(&args.checkpoint)?;
    let format: Format = args.format.as_deref().unwrap_or("triplet-tsv").parse()?;
    let (mut corpus, vocab) = data::load_counts(&args.data, format)?;
    if let Some(lp) = &args.labels {
        corpus.attach_labels(&data::load_labels(lp)?);
    }
    corpus = align_to_vocab(&corpus, &vocab, &model_vocab)?;

    let split: HeldoutSplit = match args.split_seed {
        Some(seed) => data::split_heldout(&corpus, args.heldout_fraction, seed)?,
        None => inference::fit_validation_split(&corpus, manifest.seed)?,
    };

    let iters = manifest.schedule.local_iters;
    let tol = manifest.schedule.local_tol;
    let mut rng = RngPool::new(manifest.seed).stream("eval/precision");
    let result =
        eval::evaluate(&split, &globals, &manifest.hyper, iters, tol, &mut rng)?;

    let locals = inference::transform(&corpus, &globals, &manifest.hyper, iters, tol)?;
    let report = eval::factor_report(&globals, &locals, &corpus, &model_vocab, args.top)?;

    make_dir(&args.output)?;
    eval::write_eval_json(&result, &args.output.join("eval.json"))?;
    eval::write_report_json(&report, &args.output.join("report.json"))?;
    eval::write_factor_report_tables(&report, &args.output)?;

    println!(
        "eval: perplexity {:.6}, precision@1 {:.4} over {} test sample(s)",
        result.perplexity,
        result.precision_at_1,
        result.per_sample_log_lik.len()
    );
    Ok(())
}

fn cmd_transform(args: TransformArgs) -> Result<()> {
    let (globals, manifest, model_vocab) = load_model(&args.checkpoint)?;
    let format: Format = args.format.as_deref().unwrap_or("triplet-tsv").parse()?;
    let (corpus, vocab) = data::load_counts(&args.data, format)?;
    let corpus = align_to_vocab(&corpus, &vocab, &model_vocab)?;

    let locals = inference::transform(
        &corpus,
        &globals,
        &manifest.hyper,
        manifest.schedule.local_iters,
        manifest.schedule.local_tol,
    )?;

    make_dir(&args.output)?;
    let mut table = String::from("sample_id\tfactor_id\tmean_intensity\tselector\n");
    for (j, local) in locals.iter().enumerate() {
        let theta = local.theta_mean();
        for k in 0..globals.k {
            table.push_str(&format!(
                "{}\t{}\t{:.12e}\t{:.12e}\n",
                corpus.sample_ids()[j],
                k,
                theta[k],
                local.nu[k]
            ));
        }
    }
    write_text(&args.output.join("transform.tsv"), &table)?;
    println!(
        "transform: {} sample(s) projected onto {} factors",
        corpus.n_samples(),
        globals.k
    );
    Ok(())
}

fn cmd_export_factors(args: ExportArgs) -> Result<()> {
    let (globals, manifest, model_vocab) = load_model(&args.checkpoint)?;
    let (corpus, locals) = match &args.data {
        Some(path) => {
            let format: Format =
                args.format.as_deref().unwrap_or("triplet-tsv").parse()?;
            let (mut corpus, vocab) = data::load_counts(path, format)?;
            if let Some(lp) = &args.labels {
                corpus.attach_labels(&data::load_labels(lp)?);
            }
            let corpus = align_to_vocab(&corpus, &vocab, &model_vocab)?;
            let locals = inference::transform(
                &corpus,
                &globals,
                &manifest.hyper,
                manifest.schedule.local_iters,
                manifest.schedule.local_tol,
            )?;
            (corpus, locals)
        }
        None => (CountMatrix::new(globals.m, Vec::new(), Vec::new())?, Vec::new()),
    };

    let report = eval::factor_report(&globals, &locals, &corpus, &model_vocab, args.top)?;
    make_dir(&args.output)?;
    eval::write_report_json(&report, &args.output.join("report.json"))?;
    eval::write_factor_report_tables(&report, &args.output)?;
    println!(
        "export-factors: {} factors, top {} features each, tables at {}",
        globals.k,
        args.top,
        args.output.display()
    );
    Ok(())
}
