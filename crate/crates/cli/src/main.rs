//! Command-line front end for the unsafespot pipeline.
//!
//! Each subcommand wraps one library operation: `label` projects recorded
//! source spans onto disassembled functions, `featurize` emits vocabulary and
//! feature vectors, `train`/`finetune` fit the reference scorer, `calibrate`
//! picks the recall-guaranteed threshold, `evaluate` reports curves and
//! operating points, `propose` writes ranked fuzzing focus lists, and
//! `verify-guarantee`/`stats` provide simulation and dataset reporting.
//!
//! Defaults can live in a TOML config file (`--config`, or the
//! `UNSAFESPOT_CONFIG` environment variable); explicit flags always win.
//! Outputs are deterministic for a fixed seed: no timestamps, stable key
//! order.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use unsafespot_core::calibrate::{pac_threshold, verify_guarantee, UnsafenessLaw};
use unsafespot_core::corpus::{
    ingest_debug_lines, ingest_disassembly, project_labels, Corpus, FunctionIndex,
    FunctionRecord, LabeledFunction, Provenance, SourceSpan, Split,
};
use unsafespot_core::eval::{eval_report, export_curves_csv, ClassEval, EvalReport, LabelView};
use unsafespot_core::features::{
    deep_size, tokenize, vectorize, ExpansionConfig, FeatureRecord, Vocabulary,
};
use unsafespot_core::model::{
    fine_tune, load_model, save_model, train_reference, Hyper, ScoreContext, ScoreModel,
};
use unsafespot_core::propose::{classify, classify_records, export_campaign};
use unsafespot_core::stats::corpus_stats;

/// Spot-check unsafe code in compiled binaries: label, score, calibrate,
/// and propose functions for targeted fuzzing.
#[derive(Parser)]
#[command(name = "unsafespot", version, about)]
struct Cli {
    /// TOML config file supplying flag defaults; explicit flags win.
    #[arg(long, env = "UNSAFESPOT_CONFIG", value_name = "PATH", global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for every random choice the invocation makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the result here instead of stdout (directory for `propose`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Callee expansion depth limit.
    #[arg(long, global = true)]
    max_depth: Option<u32>,
    /// Token budget per tokenized function.
    #[arg(long, global = true)]
    max_tokens: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct HyperArgs {
    /// Training passes over the data.
    #[arg(long)]
    epochs: Option<u32>,
    /// Gradient step size.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// L2 penalty on feature weights.
    #[arg(long)]
    l2: Option<f64>,
    /// Reweight classes to equal mass (true/false).
    #[arg(long)]
    class_balance: Option<bool>,
    /// Exact full-batch gradient steps instead of per-example updates.
    #[arg(long)]
    full_batch: Option<bool>,
}

#[derive(Subcommand)]
enum Command {
    /// Project recorded unsafe/bug source spans onto functions.
    Label {
        /// Disassembled functions, one JSON record per line.
        #[arg(long)]
        functions: Option<PathBuf>,
        /// Debug-line table: ELF blob or `<hex-addr> <file> <line>` text.
        #[arg(long)]
        lines: Option<PathBuf>,
        /// Recorded source spans (JSON array).
        #[arg(long)]
        spans: Option<PathBuf>,
    },
    /// Tokenize labeled functions into a vocabulary and feature vectors.
    Featurize {
        /// Labeled functions (JSONL).
        #[arg(long)]
        functions: Option<PathBuf>,
        /// Vocabulary path: loaded when the file exists, built from the
        /// input and written there otherwise.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Train a score model and save it.
    Train {
        /// Labeled training functions (JSONL).
        #[arg(long)]
        functions: Option<PathBuf>,
        /// Where to save the trained model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Model kind: reference-linear, random, external-call, or oracle.
        #[arg(long, default_value = "reference-linear")]
        kind: String,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Continue training an existing reference model on a target corpus.
    Finetune {
        /// Labeled target-domain training functions (JSONL).
        #[arg(long)]
        functions: Option<PathBuf>,
        /// Model to start from.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Calibrate the decision threshold with a recall guarantee.
    Calibrate {
        /// Labeled calibration functions (JSONL); unsafe ones are used.
        #[arg(long)]
        cal: Option<PathBuf>,
        /// Trained model to calibrate.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Highest tolerable miss fraction among unsafe functions.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Probability budget for the guarantee to fail.
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Compute curves, AUPRC, and calibrated operating points.
    Evaluate {
        /// Labeled test functions (JSONL).
        #[arg(long)]
        functions: Option<PathBuf>,
        /// Model to evaluate.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Calibration artifact for threshold-point reporting.
        #[arg(long)]
        cal: Option<PathBuf>,
        /// Restrict the report to one view: unsafe, type:<1..14>, or bug.
        #[arg(long)]
        view: Option<String>,
        /// Also export all curves as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Emit per-binary proposal sets and fuzzer focus lists.
    Propose {
        /// Functions to classify: labeled or raw JSONL.
        #[arg(long)]
        functions: Option<PathBuf>,
        /// Trained model.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Calibration artifact fixing the threshold.
        #[arg(long)]
        cal: Option<PathBuf>,
    },
    /// Simulate calibration draws and verify the recall guarantee.
    VerifyGuarantee {
        /// Highest tolerable miss fraction among unsafe functions.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Probability budget for the guarantee to fail.
        #[arg(long)]
        delta: Option<f64>,
        /// Calibration set size per simulated draw.
        #[arg(long, default_value_t = 100)]
        n_cal: usize,
        /// Simulated calibration draws.
        #[arg(long, default_value_t = 2000)]
        trials: u64,
        /// Score distribution: uniform, two-point, or beta.
        #[arg(long, default_value = "uniform")]
        law: String,
        /// two-point: lower support point.
        #[arg(long, default_value_t = 0.1)]
        low: f64,
        /// two-point: upper support point.
        #[arg(long, default_value_t = 0.9)]
        high: f64,
        /// two-point: probability mass on the lower point.
        #[arg(long, default_value_t = 0.05)]
        weight_low: f64,
        /// beta: first shape parameter.
        #[arg(long, default_value_t = 2.0)]
        alpha: f64,
        /// beta: second shape parameter.
        #[arg(long, default_value_t = 5.0)]
        beta: f64,
    },
    /// Dataset statistics: prevalence, sizes, co-occurrence.
    Stats {
        /// Labeled functions (JSONL).
        #[arg(long)]
        functions: Option<PathBuf>,
    },
}

/// Optional defaults, loaded from a flat TOML file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    functions: Option<PathBuf>,
    lines: Option<PathBuf>,
    spans: Option<PathBuf>,
    model: Option<PathBuf>,
    cal: Option<PathBuf>,
    out: Option<PathBuf>,
    vocab: Option<PathBuf>,
    epsilon: Option<f64>,
    delta: Option<f64>,
    seed: Option<u64>,
    jobs: Option<usize>,
    max_depth: Option<u32>,
    max_tokens: Option<usize>,
    epochs: Option<u32>,
    learning_rate: Option<f64>,
    l2: Option<f64>,
    class_balance: Option<bool>,
    full_batch: Option<bool>,
}

enum CliError {
    /// Bad arguments or unusable configuration; exit code 2.
    Validation(String),
    /// Failure while doing the work; exit code 1.
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| invalid(format!("bad config {}: {e}", path.display())))
}

/// A required path: flag, then config file, else a validation error.
fn need_path(
    flag: Option<PathBuf>,
    cfg: Option<&PathBuf>,
    name: &str,
) -> Result<PathBuf, CliError> {
    let path = flag
        .or_else(|| cfg.cloned())
        .ok_or_else(|| invalid(format!("--{name} is required")))?;
    if !path.exists() {
        return Err(invalid(format!(
            "--{name} path does not exist: {}",
            path.display()
        )));
    }
    Ok(path)
}

fn check_probability(value: f64, name: &str) -> Result<f64, CliError> {
    if !value.is_finite() || value <= 0.0 || value >= 1.0 {
        return Err(invalid(format!(
            "--{name} must lie strictly between 0 and 1, got {value}"
        )));
    }
    Ok(value)
}

fn corpus_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_owned())
}

/// Read `labeled.jsonl` into a corpus; binaries double as grouping keys.
fn read_labeled_corpus(path: &Path, split: Split) -> Result<Corpus, CliError> {
    let reader = BufReader::new(File::open(path)?);
    let mut functions = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: LabeledFunction = serde_json::from_str(&line)
            .map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1))?;
        functions.push(f);
    }
    let groups: BTreeSet<String> = functions
        .iter()
        .map(|f| f.function.binary_id.clone())
        .collect();
    let provenance = Provenance {
        groups,
        ..Provenance::default()
    };
    Ok(Corpus::new(corpus_name(path), split, functions, provenance)
        .map_err(anyhow::Error::from)?)
}

fn write_bytes(bytes: &[u8], out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    write_bytes(&bytes, out)
}

fn write_jsonl<T: Serialize>(items: &[T], out: Option<&Path>) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    for item in items {
        serde_json::to_writer(&mut bytes, item).expect("record serializes");
        bytes.push(b'\n');
    }
    write_bytes(&bytes, out)
}

/// Expansion config from flags/config, or the model's own when it has one.
/// Explicit flags that contradict a trained model's config are rejected
/// up front — the features would not match the weights.
fn resolve_expansion(
    flags: &ResolvedCommon,
    model: Option<&ScoreModel>,
) -> Result<ExpansionConfig, CliError> {
    let defaults = ExpansionConfig::default();
    let requested = ExpansionConfig {
        max_depth: flags.max_depth.unwrap_or(defaults.max_depth),
        max_tokens: flags.max_tokens.unwrap_or(defaults.max_tokens),
    };
    match model.and_then(ScoreModel::expansion_config) {
        Some(trained) => {
            let depth_conflict = flags.max_depth.is_some_and(|d| d != trained.max_depth);
            let tokens_conflict = flags.max_tokens.is_some_and(|t| t != trained.max_tokens);
            if depth_conflict || tokens_conflict {
                return Err(invalid(format!(
                    "model was trained with max_depth={}, max_tokens={}; \
                     conflicting expansion flags given",
                    trained.max_depth, trained.max_tokens
                )));
            }
            Ok(trained)
        }
        None => Ok(requested),
    }
}

/// Flags merged with the config file (flags win).
struct ResolvedCommon {
    seed: u64,
    out: Option<PathBuf>,
    max_depth: Option<u32>,
    max_tokens: Option<usize>,
    epsilon: f64,
    delta: f64,
    file: FileConfig,
}

fn resolve_hyper(args: &HyperArgs, common: &ResolvedCommon) -> Hyper {
    let defaults = Hyper::default();
    let file = &common.file;
    Hyper {
        epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        learning_rate: args
            .learning_rate
            .or(file.learning_rate)
            .unwrap_or(defaults.learning_rate),
        l2: args.l2.or(file.l2).unwrap_or(defaults.l2),
        seed: common.seed,
        class_balance: args
            .class_balance
            .or(file.class_balance)
            .unwrap_or(defaults.class_balance),
        full_batch: args
            .full_batch
            .or(file.full_batch)
            .unwrap_or(defaults.full_batch),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = load_config(cli.config.as_deref())?;
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            return Err(invalid("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(anyhow::Error::from)?;
    }
    let common = ResolvedCommon {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out: cli.out.or_else(|| file.out.clone()),
        max_depth: cli.max_depth.or(file.max_depth),
        max_tokens: cli.max_tokens.or(file.max_tokens),
        epsilon: file.epsilon.unwrap_or(0.1),
        delta: file.delta.unwrap_or(1e-3),
        file,
    };

    match cli.command {
        Command::Label { functions, lines, spans } => cmd_label(functions, lines, spans, &common),
        Command::Featurize { functions, vocab } => cmd_featurize(functions, vocab, &common),
        Command::Train { functions, model, kind, hyper } => {
            cmd_train(functions, model, &kind, &hyper, &common)
        }
        Command::Finetune { functions, model, hyper } => {
            cmd_finetune(functions, model, &hyper, &common)
        }
        Command::Calibrate { cal, model, epsilon, delta } => {
            cmd_calibrate(cal, model, epsilon, delta, &common)
        }
        Command::Evaluate { functions, model, cal, view, csv } => {
            cmd_evaluate(functions, model, cal, view, csv, &common)
        }
        Command::Propose { functions, model, cal } => cmd_propose(functions, model, cal, &common),
        Command::VerifyGuarantee {
            epsilon,
            delta,
            n_cal,
            trials,
            law,
            low,
            high,
            weight_low,
            alpha,
            beta,
        } => {
            let law = parse_law(&law, low, high, weight_low, alpha, beta)?;
            let epsilon = check_probability(epsilon.unwrap_or(common.epsilon), "epsilon")?;
            let delta = check_probability(delta.unwrap_or(common.delta), "delta")?;
            let check = verify_guarantee(law, n_cal, epsilon, delta, trials, common.seed)
                .map_err(anyhow::Error::from)?;
            write_json(&check, common.out.as_deref())
        }
        Command::Stats { functions } => cmd_stats(functions, &common),
    }
}

fn cmd_label(
    functions: Option<PathBuf>,
    lines: Option<PathBuf>,
    spans: Option<PathBuf>,
    common: &ResolvedCommon,
) -> Result<(), CliError> {
    let functions_path = need_path(functions, common.file.functions.as_ref(), "functions")?;
    let lines_path = need_path(lines, common.file.lines.as_ref(), "lines")?;
    let spans_path = need_path(spans, common.file.spans.as_ref(), "spans")?;

    let records = ingest_disassembly(BufReader::new(File::open(&functions_path)?))
        .map_err(anyhow::Error::from)?;
    let line_map =
        ingest_debug_lines(&std::fs::read(&lines_path)?).map_err(anyhow::Error::from)?;
    let spans: Vec<SourceSpan> = serde_json::from_slice(&std::fs::read(&spans_path)?)
        .map_err(|e| anyhow::anyhow!("{}: {e}", spans_path.display()))?;

    let projection = project_labels(records, &line_map, &spans);
    if projection.missing_line_info > 0 {
        eprintln!(
            "note: {} instruction(s) had no debug-line row and contributed no labels",
            projection.missing_line_info
        );
    }
    write_jsonl(&projection.functions, common.out.as_deref())
}

fn cmd_featurize(
    functions: Option<PathBuf>,
    vocab: Option<PathBuf>,
    common: &ResolvedCommon,
) -> Result<(), CliError> {
    let functions_path = need_path(functions, common.file.functions.as_ref(), "functions")?;
    let vocab_path = vocab.or_else(|| common.file.vocab.clone());
    let corpus = read_labeled_corpus(&functions_path, Split::Train)?;
    let config = resolve_expansion(common, None)?;
    let index = corpus.index();

    let sequences: Vec<_> = corpus
        .functions
        .iter()
        .map(|f| tokenize(&f.function, &index, &config))
        .collect();
    let vocabulary = match &vocab_path {
        Some(path) if path.exists() => {
            serde_json::from_slice(&std::fs::read(path)?)
                .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?
        }
        _ => {
            let built = Vocabulary::build(sequences.iter());
            if let Some(path) = &vocab_path {
                let mut bytes = serde_json::to_vec_pretty(&built).expect("vocab serializes");
                bytes.push(b'\n');
                std::fs::write(path, bytes)?;
            }
            built
        }
    };

    let rows: Vec<FeatureRecord> = corpus
        .functions
        .iter()
        .zip(&sequences)
        .map(|(f, seq)| {
            let x = vectorize(seq, &vocabulary);
            let size = deep_size(&f.function, &index, &config);
            FeatureRecord {
                function_id: f.function.function_id.clone(),
                counts: x.counts,
                oov: x.oov,
                deep: size.deep,
                shallow: size.shallow,
            }
        })
        .collect();
    write_jsonl(&rows, common.out.as_deref())
}

fn cmd_train(
    functions: Option<PathBuf>,
    model_out: Option<PathBuf>,
    kind: &str,
    hyper_args: &HyperArgs,
    common: &ResolvedCommon,
) -> Result<(), CliError> {
    let model_path = model_out
        .or_else(|| common.file.model.clone())
        .ok_or_else(|| invalid("--model is required (output path for the trained model)"))?;
    let model = match kind {
        "reference-linear" => {
            let functions_path =
                need_path(functions, common.file.functions.as_ref(), "functions")?;
            let corpus = read_labeled_corpus(&functions_path, Split::Train)?;
            let config = resolve_expansion(common, None)?;
            let hyper = resolve_hyper(hyper_args, common);
            train_reference(&corpus, config, hyper).map_err(anyhow::Error::from)?
        }
        "random" => ScoreModel::Random { seed: common.seed },
        "external-call" => ScoreModel::ExternalCall,
        "oracle" => ScoreModel::Oracle,
        other => {
            return Err(invalid(format!(
                "unknown model kind {other:?}; expected reference-linear, random, \
                 external-call, or oracle"
            )))
        }
    };
    save_model(&model, &model_path).map_err(anyhow::Error::from)?;
    eprintln!("saved {} model to {}", model.kind(), model_path.display());
    Ok(())
}

fn cmd_finetune(
    functions: Option<PathBuf>,
    model_in: Option<PathBuf>,
    hyper_args: &HyperArgs,
    common: &ResolvedCommon,
) -> Result<(), CliError> {
    let functions_path = need_path(functions, common.file.functions.as_ref(), "functions")?;
    let model_path = need_path(model_in, common.file.model.as_ref(), "model")?;
    let out = common
        .out
        .clone()
        .ok_or_else(|| invalid("--out is required (path for the fine-tuned model)"))?;
    let model = load_model(&model_path).map_err(anyhow::Error::from)?;
    let corpus = read_labeled_corpus(&functions_path, Split::Train)?;
    let hyper = resolve_hyper(hyper_args, common);
    let tuned = fine_tune(&model, &corpus, hyper).map_err(anyhow::Error::from)?;
    save_model(&tuned, &out).map_err(anyhow::Error::from)?;
    eprintln!("saved fine-tuned model to {}", out.display());
    Ok(())
}

fn cmd_calibrate(
    cal: Option<PathBuf>,
    model: Option<PathBuf>,
    epsilon: Option<f64>,
    delta: Option<f64>,
    common: &ResolvedCommon,
) -> Result<(), CliError> {
    let cal_path = need_path(cal, common.file.cal.as_ref(), "cal")?;
    let model_path = need_path(model, common.file.model.as_ref(), "model")?;
    let epsilon = check_probability(epsilon.unwrap_or(common.epsilon), "epsilon")?;
    let delta = check_probability(delta.unwrap_or(common.delta), "delta")?;

    let model = load_model(&model_path).map_err(anyhow::Error::from)?;
    let corpus = read_labeled_corpus(&cal_path, Split::Val)?;
    let config = resolve_expansion(common, Some(&model))?;
    let index = corpus.index();
    let ctx = ScoreContext::new(&index, config);
    let report = pac_threshold(&corpus, &model, &ctx, epsilon, delta)
        .map_err(anyhow::Error::from)?;
    if !report.feasible {
        eprintln!(
            "warning: no threshold satisfies the bound at epsilon={epsilon}, delta={delta} \
             with {} calibration functions; falling back to tau=0 (accept everything)",
            report.calibration_size
        );
    }
    write_json(&report, common.out.as_deref())
}

fn cmd_evaluate(
    functions: Option<PathBuf>,
    model: Option<PathBuf>,
    cal: Option<PathBuf>,
    view: Option<String>,
    csv: Option<PathBuf>,
    common: &ResolvedCommon,
) -> Result<(), CliError> {
    let functions_path = need_path(functions, common.file.functions.as_ref(), "functions")?;
    let model_path = need_path(model, common.file.model.as_ref(), "model")?;
    let view = view
        .map(|v| LabelView::parse(&v).map_err(|e| invalid(e.to_string())))
        .transpose()?;
    let calibration = match cal.or_else(|| common.file.cal.clone()) {
        Some(path) => Some(
            serde_json::from_slice(&std::fs::read(&path)?)
                .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?,
        ),
        None => None,
    };

    let model = load_model(&model_path).map_err(anyhow::Error::from)?;
    let corpus = read_labeled_corpus(&functions_path, Split::Test)?;
    let config = resolve_expansion(common, Some(&model))?;
    let index = corpus.index();
    let ctx = ScoreContext::new(&index, config);
    let report: EvalReport = eval_report(&corpus, &model, &ctx, calibration.as_ref())
        .map_err(anyhow::Error::from)?;

    let shared: BTreeSet<&str> = report
        .threshold_points
        .iter()
        .flat_map(|tp| tp.shared_groups.iter().map(String::as_str))
        .collect();
    if !shared.is_empty() {
        eprintln!(
            "warning: calibration and test corpora share grouping key(s): {}",
            shared.into_iter().collect::<Vec<_>>().join(", ")
        );
    }
    if let Some(path) = csv {
        export_curves_csv(&report, &path).map_err(anyhow::Error::from)?;
    }
    match view {
        None => write_json(&report, common.out.as_deref()),
        Some(view) => {
            let section: Option<&ClassEval> = match view {
                LabelView::Unsafe => Some(&report.overall),
                LabelView::Type(j) => report.per_type.get(&j),
                LabelView::Bug => report.bug.as_ref(),
            };
            let section = section.ok_or_else(|| {
                anyhow::anyhow!("view {view} has no data in this corpus")
            })?;
            write_json(section, common.out.as_deref())
        }
    }
}

/// Does a JSONL line look like a labeled function (has a label set)?
fn is_labeled_line(line: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(line)
        .map(|v| v.get("u").is_some())
        .unwrap_or(false)
}

fn cmd_propose(
    functions: Option<PathBuf>,
    model: Option<PathBuf>,
    cal: Option<PathBuf>,
    common: &ResolvedCommon,
) -> Result<(), CliError> {
    let functions_path = need_path(functions, common.file.functions.as_ref(), "functions")?;
    let model_path = need_path(model, common.file.model.as_ref(), "model")?;
    let cal_path = need_path(cal, common.file.cal.as_ref(), "cal")?;
    let out_dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));

    let model = load_model(&model_path).map_err(anyhow::Error::from)?;
    let calibration = serde_json::from_slice(&std::fs::read(&cal_path)?)
        .map_err(|e| anyhow::anyhow!("{}: {e}", cal_path.display()))?;
    let config = resolve_expansion(common, Some(&model))?;

    let first_data_line = BufReader::new(File::open(&functions_path)?)
        .lines()
        .find_map(|l| l.ok().filter(|l| !l.trim().is_empty()));
    let labeled = first_data_line.as_deref().map(is_labeled_line).unwrap_or(true);

    let sets = if labeled {
        let corpus = read_labeled_corpus(&functions_path, Split::Test)?;
        let index = corpus.index();
        let ctx = ScoreContext::new(&index, config);
        classify(&corpus, &model, &calibration, &ctx).map_err(anyhow::Error::from)?
    } else {
        let records: Vec<FunctionRecord> =
            ingest_disassembly(BufReader::new(File::open(&functions_path)?))
                .map_err(anyhow::Error::from)?;
        let index = FunctionIndex::from_records(records.iter());
        let ctx = ScoreContext::new(&index, config);
        classify_records(&records, &model, &calibration, &ctx).map_err(anyhow::Error::from)?
    };

    std::fs::create_dir_all(&out_dir)?;
    let manifest = export_campaign(&sets, &out_dir).map_err(anyhow::Error::from)?;
    let mut bytes = serde_json::to_vec_pretty(&sets).expect("sets serialize");
    bytes.push(b'\n');
    std::fs::write(out_dir.join("proposals.json"), bytes)?;
    eprintln!(
        "wrote {} focus list(s) and campaign.json to {}",
        manifest.binaries.len(),
        out_dir.display()
    );
    Ok(())
}

fn parse_law(
    law: &str,
    low: f64,
    high: f64,
    weight_low: f64,
    alpha: f64,
    beta: f64,
) -> Result<UnsafenessLaw, CliError> {
    match law {
        "uniform" => Ok(UnsafenessLaw::Uniform),
        "two-point" => Ok(UnsafenessLaw::TwoPoint { low, high, weight_low }),
        "beta" => Ok(UnsafenessLaw::Beta { alpha, beta }),
        other => Err(invalid(format!(
            "unknown law {other:?}; expected uniform, two-point, or beta"
        ))),
    }
}

fn cmd_stats(functions: Option<PathBuf>, common: &ResolvedCommon) -> Result<(), CliError> {
    let functions_path = need_path(functions, common.file.functions.as_ref(), "functions")?;
    let corpus = read_labeled_corpus(&functions_path, Split::Test)?;
    let config = resolve_expansion(common, None)?;
    let index = corpus.index();
    let report = corpus_stats(&corpus, &index, &config).map_err(anyhow::Error::from)?;
    write_json(&report, common.out.as_deref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_supplies_defaults_and_rejects_unknown_keys() {
        let cfg: FileConfig =
            toml::from_str("epsilon = 0.2\nmax_depth = 1\nseed = 7\n").unwrap();
        assert_eq!(cfg.epsilon, Some(0.2));
        assert_eq!(cfg.max_depth, Some(1));
        assert_eq!(cfg.seed, Some(7));
        assert!(toml::from_str::<FileConfig>("epsilonn = 0.2\n").is_err());
    }

    #[test]
    fn probability_validation_is_strict() {
        assert!(check_probability(0.5, "epsilon").is_ok());
        for bad in [0.0, 1.0, -0.1, 1.1, f64::NAN] {
            assert!(check_probability(bad, "epsilon").is_err(), "{bad} accepted");
        }
    }

    #[test]
    fn law_parsing_covers_all_kinds() {
        assert!(matches!(
            parse_law("uniform", 0.0, 0.0, 0.0, 1.0, 1.0),
            Ok(UnsafenessLaw::Uniform)
        ));
        assert!(matches!(
            parse_law("two-point", 0.1, 0.9, 0.05, 1.0, 1.0),
            Ok(UnsafenessLaw::TwoPoint { .. })
        ));
        assert!(matches!(
            parse_law("beta", 0.0, 0.0, 0.0, 2.0, 5.0),
            Ok(UnsafenessLaw::Beta { .. })
        ));
        assert!(parse_law("normal", 0.0, 0.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn labeled_detection_looks_for_label_sets() {
        assert!(is_labeled_line(r#"{"function_id":"f","u":[0]}"#));
        assert!(!is_labeled_line(r#"{"function_id":"f","instructions":[]}"#));
        assert!(!is_labeled_line("not json"));
    }
}
