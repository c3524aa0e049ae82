use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

use spanqa_augment::adapter::ToyAdapter;
use spanqa_augment::checkpoint::Checkpoint;
use spanqa_augment::gradcheck::{grad_check, GradCheckReport};
use spanqa_augment::toy::{train_separable, ToySignal, ToyTask};
use spanqa_augment::train::TrainSettings;
use spanqa_core::corpus::{load_corpus, validate_sentence, SkippedRecord, Warning};
use spanqa_core::dataset::{
    build_dataset, compute_length_histogram, compute_type_distribution, export_squad, import_squad, part_sizes,
    split_dataset, AnswerTypePrior, LengthHistogram, Provenance, QADataset, SplitPlan, DEFAULT_LENGTH_EDGES,
};
use spanqa_core::filter::{
    filter_part, read_predictions, run_training_procedure_observed, write_predictions, FilterConfig, FilterCounts,
    ModelAdapter, RunReport,
};

use crate::config::RunConfig;
use crate::external::{CommandAdapter, RecordingAdapter};
use crate::{
    BuildArgs, Cli, Command, ExportArgs, FilterArgs, FilterFlags, FineTuneArgs, GradcheckArgs, PredictArgs, RunArgs,
    SplitArgs, SplitFlags, StatsArgs, ToyTrainArgs, ValidateArgs,
};

pub const EXIT_INVALID: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_TOLERANCE: u8 = 3;

/// Configuration or usage problem; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code_for(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else {
        1
    }
}

struct Ctx {
    cfg: RunConfig,
    timestamp: bool,
}

/// Every JSON report goes through this so the timestamp can be left out.
#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_at_unix: Option<u64>,
    #[serde(flatten)]
    body: &'a T,
}

impl Ctx {
    fn report_json<T: Serialize>(&self, body: &T) -> Result<String> {
        let generated_at_unix = self.timestamp.then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        });
        let mut s = serde_json::to_string_pretty(&Stamped {
            generated_at_unix,
            body,
        })?;
        s.push('\n');
        Ok(s)
    }

    /// Writes a report to `path`, or to stdout when `path` is `None`.
    fn emit<T: Serialize>(&self, body: &T, path: Option<&Path>) -> Result<()> {
        let text = self.report_json(body)?;
        match path {
            Some(p) => write_file(p, text.as_bytes()),
            None => {
                std::io::stdout().write_all(text.as_bytes())?;
                Ok(())
            }
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn read_dataset(path: &Path) -> Result<QADataset> {
    import_squad(open(path)?).with_context(|| format!("reading dataset {}", path.display()))
}

fn write_dataset(data: &QADataset, path: &Path) -> Result<()> {
    export_squad(data, create(path)?, true).with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Flag value, else config value, else a usage error naming both.
fn require(flag: Option<PathBuf>, from_config: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| from_config.clone()).ok_or_else(|| {
        usage(format!(
            "no {what} given; pass --{what} or set paths.{what} in the config"
        ))
    })
}

pub fn dispatch(cli: Cli) -> Result<u8> {
    let g = cli.global;
    let mut cfg = RunConfig::load(g.config.as_deref()).map_err(|e| usage(format!("{e:#}")))?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut ctx = Ctx {
        cfg,
        timestamp: !g.no_timestamp,
    };
    match cli.command {
        Command::Validate(a) => validate(&ctx, a),
        Command::Build(a) => build(&mut ctx, a),
        Command::Stats(a) => stats(&ctx, a),
        Command::Split(a) => split(&mut ctx, a),
        Command::Filter(a) => filter(&mut ctx, a),
        Command::Run(a) => run(&mut ctx, a),
        Command::Gradcheck(a) => gradcheck(&mut ctx, a),
        Command::ExportSquad(a) => export(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::FineTune(a) => fine_tune(&ctx, a),
        Command::ToyTrain(a) => toy_train(&mut ctx, a),
    }
}

fn checked(ctx: &Ctx) -> Result<()> {
    ctx.cfg.validate().map_err(|e| usage(format!("{e:#}")))
}

#[derive(Serialize)]
struct SentenceWarnings {
    sentence_id: String,
    warnings: Vec<Warning>,
}

#[derive(Serialize)]
struct ValidateReport {
    corpus: String,
    records: usize,
    valid: usize,
    invalid: usize,
    all_valid: bool,
    problems: Vec<SkippedRecord>,
    warnings: Vec<SentenceWarnings>,
    notes: Vec<String>,
}

fn validate(ctx: &Ctx, a: ValidateArgs) -> Result<u8> {
    let path = require(a.corpus, &ctx.cfg.paths.corpus, "corpus")?;
    let mut reader = load_corpus(open(&path)?);
    let mut warnings = Vec::new();
    for s in reader.by_ref() {
        let s = s?;
        let r = validate_sentence(&s);
        if !r.warnings.is_empty() {
            warnings.push(SentenceWarnings {
                sentence_id: r.sentence_id,
                warnings: r.warnings,
            });
        }
    }
    let skip = reader.into_report();
    let records = skip.yielded + skip.skipped.len();
    let mut notes = Vec::new();
    if records == 0 {
        eprintln!("warning: {} contains zero sentences", path.display());
        notes.push("corpus contains zero sentences".to_string());
    }
    let report = ValidateReport {
        corpus: path.display().to_string(),
        records,
        valid: skip.yielded,
        invalid: skip.skipped.len(),
        all_valid: skip.skipped.is_empty(),
        problems: skip.skipped,
        warnings,
        notes,
    };
    eprintln!(
        "{} records, {} valid, {} invalid",
        report.records, report.valid, report.invalid
    );
    ctx.emit(&report, a.report.as_deref())?;
    Ok(if report.all_valid { 0 } else { EXIT_INVALID })
}

#[derive(Serialize)]
struct DatasetStats {
    instances: usize,
    type_distribution: Option<AnswerTypePrior>,
    length_histogram: LengthHistogram,
}

fn dataset_stats(data: &QADataset, edges: &[usize]) -> Result<DatasetStats> {
    Ok(DatasetStats {
        instances: data.len(),
        // An empty dataset has no distribution.
        type_distribution: compute_type_distribution(data).ok(),
        length_histogram: compute_length_histogram(data, edges).map_err(|e| usage(e.to_string()))?,
    })
}

#[derive(Serialize)]
struct BuildReport<'a> {
    corpus: String,
    dataset: String,
    provenance: &'a Provenance,
    #[serde(flatten)]
    stats: DatasetStats,
    skipped: Vec<SkippedRecord>,
}

fn build(ctx: &mut Ctx, a: BuildArgs) -> Result<u8> {
    if let Some(m) = a.mode {
        ctx.cfg.build.mode = m.into();
    }
    if let Some(w) = a.omega {
        ctx.cfg.extension.omega_percent = w;
    }
    checked(ctx)?;
    let corpus = require(a.corpus, &ctx.cfg.paths.corpus, "corpus")?;
    let out = require(a.out, &ctx.cfg.paths.dataset, "out")?;
    let stats_path = a.stats.unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".stats.json");
        PathBuf::from(s)
    });
    let ext = ctx.cfg.extension()?;
    let (data, skip) = build_dataset(open(&corpus)?, &ext, &ctx.cfg.build_options())?;
    write_dataset(&data, &out)?;
    let report = BuildReport {
        corpus: corpus.display().to_string(),
        dataset: out.display().to_string(),
        provenance: &data.provenance,
        stats: dataset_stats(&data, &DEFAULT_LENGTH_EDGES)?,
        skipped: skip.skipped,
    };
    ctx.emit(&report, Some(&stats_path))?;
    eprintln!(
        "{} instances written to {}; {} corpus records skipped",
        data.len(),
        out.display(),
        report.skipped.len()
    );
    Ok(0)
}

fn stats(ctx: &Ctx, a: StatsArgs) -> Result<u8> {
    let path = require(a.dataset, &ctx.cfg.paths.dataset, "dataset")?;
    let data = read_dataset(&path)?;
    let edges = a.edges.unwrap_or_else(|| DEFAULT_LENGTH_EDGES.to_vec());
    ctx.emit(&dataset_stats(&data, &edges)?, a.out.as_deref())?;
    Ok(0)
}

fn apply_split_flags(cfg: &mut RunConfig, f: SplitFlags) {
    if let Some(n) = f.initial_size {
        cfg.split.initial_size = n;
    }
    if let Some(n) = f.parts {
        cfg.split.filter_parts = n;
    }
    if let Some(s) = f.strategy {
        cfg.split.strategy = s.into();
    }
}

fn apply_filter_flags(cfg: &mut RunConfig, f: FilterFlags) {
    if let Some(k) = f.k {
        cfg.filter.k = k;
    }
    if let Some(g) = f.gamma_sub {
        cfg.filter.gamma_sub = g;
    }
    if let Some(m) = f.match_mode {
        cfg.filter.match_mode = m.into();
    }
    if f.relabel_substring {
        cfg.filter.relabel_substring = true;
    }
}

#[derive(Serialize)]
struct SplitReport {
    dataset: String,
    plan: SplitPlan,
    initial: usize,
    parts: Vec<usize>,
    files: Vec<String>,
}

fn split(ctx: &mut Ctx, a: SplitArgs) -> Result<u8> {
    apply_split_flags(&mut ctx.cfg, a.plan);
    checked(ctx)?;
    let path = require(a.dataset, &ctx.cfg.paths.dataset, "dataset")?;
    let out_dir = require(a.out_dir, &ctx.cfg.paths.out_dir, "out_dir")?;
    let data = read_dataset(&path)?;
    let plan = ctx.cfg.split_plan();
    if plan.initial_size > data.len() {
        return Err(usage(format!(
            "initial size {} exceeds the {} instances in {}",
            plan.initial_size,
            data.len(),
            path.display()
        )));
    }
    let split = split_dataset(&data, &plan)?;
    let mut files = vec![out_dir.join("initial.jsonl")];
    write_dataset(&split.initial, &files[0])?;
    for (i, part) in split.parts.iter().enumerate() {
        let f = out_dir.join(format!("part-{}.jsonl", i + 1));
        write_dataset(part, &f)?;
        files.push(f);
    }
    debug_assert_eq!(
        split.parts.iter().map(QADataset::len).collect::<Vec<_>>(),
        part_sizes(data.len() - plan.initial_size, plan.filter_parts)
    );
    let report = SplitReport {
        dataset: path.display().to_string(),
        initial: split.initial.len(),
        parts: split.parts.iter().map(QADataset::len).collect(),
        files: files.iter().map(|f| f.display().to_string()).collect(),
        plan,
    };
    ctx.emit(&report, Some(&out_dir.join("split_report.json")))?;
    eprintln!("initial {} / parts {:?}", report.initial, report.parts);
    Ok(0)
}

#[derive(Serialize)]
struct FilterReport {
    part: String,
    predictions: String,
    filter: FilterConfig,
    #[serde(flatten)]
    counts: FilterCounts,
    kept: usize,
}

fn filter(ctx: &mut Ctx, a: FilterArgs) -> Result<u8> {
    apply_filter_flags(&mut ctx.cfg, a.filter);
    checked(ctx)?;
    let preds_path = require(a.predictions, &ctx.cfg.paths.predictions, "predictions")?;
    let out_dir = require(a.out_dir, &ctx.cfg.paths.out_dir, "out_dir")?;
    let part = read_dataset(&a.part)?;
    let preds = read_predictions(open(&preds_path)?)
        .with_context(|| format!("reading predictions {}", preds_path.display()))?;
    let fc = ctx.cfg.filter_config();
    let outcome = filter_part(&part, &preds, &fc);
    write_dataset(&outcome.kept, &out_dir.join("kept.jsonl"))?;
    write_jsonl(&outcome.decisions, &out_dir.join("decisions.jsonl"))?;
    let report = FilterReport {
        part: a.part.display().to_string(),
        predictions: preds_path.display().to_string(),
        filter: fc,
        kept: outcome.counts.kept(),
        counts: outcome.counts,
    };
    ctx.emit(&report, Some(&out_dir.join("filter_report.json")))?;
    eprintln!("kept {} of {}", report.kept, report.counts.part_size);
    Ok(0)
}

#[derive(Serialize)]
struct RunOutput<'a> {
    dataset: String,
    adapter: &'static str,
    #[serde(flatten)]
    report: &'a RunReport,
}

fn run(ctx: &mut Ctx, a: RunArgs) -> Result<u8> {
    apply_split_flags(&mut ctx.cfg, a.plan);
    apply_filter_flags(&mut ctx.cfg, a.filter);
    checked(ctx)?;
    let path = require(a.dataset, &ctx.cfg.paths.dataset, "dataset")?;
    let out_dir = require(a.out_dir, &ctx.cfg.paths.out_dir, "out_dir")?;
    let data = read_dataset(&path)?;
    let plan = ctx.cfg.split_plan();
    if plan.initial_size > data.len() {
        return Err(usage(format!(
            "initial size {} exceeds the {} instances in {}",
            plan.initial_size,
            data.len(),
            path.display()
        )));
    }
    let fc = ctx.cfg.filter_config();

    let mut toy;
    let mut ext;
    let (inner, adapter): (&mut dyn ModelAdapter, &'static str) =
        match (&ctx.cfg.adapter.predict_command, &ctx.cfg.adapter.fine_tune_command) {
            (Some(p), Some(f)) => {
                ext = CommandAdapter::new(p.clone(), f.clone(), out_dir.join("work"));
                (&mut ext, "command")
            }
            _ => {
                toy = ToyAdapter::new(ctx.cfg.adapter_config(Some(out_dir.join("checkpoints"))))
                    .map_err(|e| usage(e.to_string()))?;
                (&mut toy, "toy")
            }
        };
    let mut recording = RecordingAdapter::new(inner, out_dir.join("predictions"));

    let rounds_dir = out_dir.join("rounds");
    let mut io_error: Option<anyhow::Error> = None;
    let report = run_training_procedure_observed(&data, &plan, &mut recording, &fc, &mut |round, _part, outcome| {
        if io_error.is_some() {
            return;
        }
        let res = write_jsonl(
            &outcome.decisions,
            &rounds_dir.join(format!("round-{round}.decisions.jsonl")),
        )
        .and_then(|_| write_dataset(&outcome.kept, &rounds_dir.join(format!("round-{round}.kept.jsonl"))));
        if let Err(e) = res {
            io_error = Some(e);
        }
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let out = RunOutput {
        dataset: path.display().to_string(),
        adapter,
        report: &report,
    };
    ctx.emit(&out, Some(&out_dir.join("run_report.json")))?;
    for r in &report.rounds {
        eprintln!(
            "round {}: kept {} (top-k {}, substring {}) of {}",
            r.round,
            r.counts.kept(),
            r.counts.kept_top_k,
            r.counts.kept_substring,
            r.counts.part_size
        );
    }
    Ok(0)
}

fn gradcheck(ctx: &mut Ctx, a: GradcheckArgs) -> Result<u8> {
    if let Some(t) = a.tolerance {
        ctx.cfg.gradcheck.tolerance = t;
    }
    checked(ctx)?;
    let report: GradCheckReport = grad_check(&ctx.cfg.gradcheck_config()).map_err(|e| usage(e.to_string()))?;
    ctx.emit(&report, a.out.as_deref())?;
    eprintln!(
        "max relative error {:.3e} ({} [{}]) over {} entries, tolerance {:.1e}",
        report.max_rel_err, report.worst_param, report.worst_index, report.checked, report.tolerance
    );
    Ok(if report.passed { 0 } else { EXIT_TOLERANCE })
}

fn export(ctx: &Ctx, a: ExportArgs) -> Result<u8> {
    let path = require(a.dataset, &ctx.cfg.paths.dataset, "dataset")?;
    let data = read_dataset(&path)?;
    export_squad(&data, create(&a.out)?, a.with_meta).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("{} records written to {}", data.len(), a.out.display());
    Ok(0)
}

fn toy_adapter(ctx: &Ctx, checkpoint: Option<&Path>) -> Result<ToyAdapter> {
    let cfg = ctx.cfg.adapter_config(None);
    let adapter = match checkpoint.filter(|p| p.exists()) {
        Some(p) => {
            let ck = Checkpoint::read(open(p)?).with_context(|| format!("reading checkpoint {}", p.display()))?;
            ToyAdapter::from_checkpoint(cfg, &ck)
        }
        None => ToyAdapter::new(cfg),
    };
    adapter.map_err(|e| usage(e.to_string()))
}

fn predict(ctx: &Ctx, a: PredictArgs) -> Result<u8> {
    checked(ctx)?;
    let data = read_dataset(&a.dataset)?;
    let adapter = toy_adapter(ctx, a.checkpoint.as_deref())?;
    let preds = adapter.predict_dataset(&data)?;
    write_predictions(&preds, create(&a.out)?)?;
    Ok(0)
}

fn fine_tune(ctx: &Ctx, a: FineTuneArgs) -> Result<u8> {
    checked(ctx)?;
    let data = read_dataset(&a.dataset)?;
    let mut adapter = toy_adapter(ctx, Some(&a.checkpoint))?;
    let used = adapter.fine_tune_dataset(&data)?;
    adapter.to_checkpoint().write(create(&a.checkpoint)?)?;
    eprintln!("fine-tuned on {used} instances; checkpoint {}", a.checkpoint.display());
    Ok(0)
}

#[derive(Serialize)]
struct ToyTrainReport {
    examples: usize,
    steps: usize,
    lr: f64,
    plant_strength: f64,
    #[serde(flatten)]
    signal: ToySignal,
}

fn toy_train(ctx: &mut Ctx, a: ToyTrainArgs) -> Result<u8> {
    if let Some(s) = a.steps {
        ctx.cfg.toy_train.steps = s;
    }
    if let Some(lr) = a.lr {
        ctx.cfg.toy_train.lr = lr;
    }
    checked(ctx)?;
    let t = &ctx.cfg.toy_train;
    if t.steps == 0 || t.examples == 0 {
        return Err(usage("toy_train.steps and toy_train.examples must be positive"));
    }
    let mut task = ToyTask::separable(t.examples, ctx.cfg.seed).map_err(|e| usage(e.to_string()))?;
    let m = ctx.cfg.model_config();
    task.config.gamma_prior = m.gamma_prior;
    task.config.alpha = m.alpha;
    task.config.beta = m.beta;
    let settings = TrainSettings {
        steps: t.steps,
        lr: t.lr,
        seed: ctx.cfg.seed,
        ..TrainSettings::default()
    };
    let (_, signal) = train_separable(&task, &settings, t.plant_strength)?;
    if let Some(p) = &a.trace {
        write_file(p, signal.trace.to_csv().as_bytes())?;
    }
    eprintln!(
        "total loss {:.4} -> {:.4} ({:.1}% lower); held-out discriminator accuracy {:.3} (chance {:.3})",
        signal.initial_total,
        signal.final_total,
        100.0 * signal.loss_reduction,
        signal.held_out_accuracy,
        signal.chance
    );
    let report = ToyTrainReport {
        examples: t.examples,
        steps: t.steps,
        lr: t.lr,
        plant_strength: t.plant_strength,
        signal,
    };
    ctx.emit(&report, a.out.as_deref())?;
    Ok(0)
}
