//! Command-line entry point: `ingest`, `stats`, `judge`, `rank`, `revise`,
//! `serve`. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::annotate::{self, CreateOptions, CriticJudgments, ServeOptions, Store, StoreOptions, TaskKind};
use crate::autorater::{self, build_leaderboard, leaderboard_report, Criterion, PublishedTables};
use crate::backend::{build_backend, Backend, RunConfig};
use crate::classify::{judge_caption, read_judgments, write_judgments, CaptionJudgment, JudgeOptions};
use crate::corpus::{
    aggregate_corpus, corpus_stats, parse_corpus, total_stats, write_corpus, CaptionRecord, ModelStats,
};
use crate::pool::parallel_map;
use crate::prompt::REVISION_TEMPLATE_VERSION;
use crate::revise::{self, PipelineReport, ReviseOptions};

type Failure = Box<dyn std::error::Error + Send + Sync>;

#[derive(Parser, Debug)]
#[command(name = "caption-critic", version, about = "Sentence-level caption factuality toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a corpus (segmenting records that lack sentence spans) and
    /// write it in canonical form.
    Ingest(IngestArgs),
    /// Per-model description statistics with a TOTAL row.
    Stats(StatsArgs),
    /// Judge every sentence of a corpus with one backend.
    Judge(JudgeArgs),
    /// Leaderboards and rank correlation against a reference.
    Rank(RankArgs),
    /// Critic-and-Revise over a corpus.
    Revise(ReviseArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for sampled backends; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the run manifest; defaults next to the output.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Write JSON rows here instead of a text table on stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct JudgeArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Backend name from the config.
    #[arg(long)]
    backend: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    with_critique: bool,
    /// Mark failing sentences unjudged instead of failing the caption.
    #[arg(long)]
    keep_partial: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct RankArgs {
    /// Judgments JSONL (model_name set on every caption).
    #[arg(long, conflicts_with = "published")]
    judgments: Option<PathBuf>,
    /// Reference: an annotated corpus or another judgments file.
    #[arg(long, requires = "judgments")]
    reference: Option<PathBuf>,
    /// Published leaderboard tables; ranks one method's column.
    #[arg(long, requires = "method")]
    published: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value = "all")]
    criterion: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ReviseArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    critic: String,
    #[arg(long)]
    reviser: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Re-judge revised sentences with the critic and write a report.
    #[arg(long)]
    self_judge: bool,
    /// Report path; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Store directory (journal and snapshot).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Built UI assets served at `/`.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Create tasks from this corpus before serving.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "sentence")]
    kind: String,
    /// Critique sources for critique tasks, as `critic=judgments.jsonl`.
    #[arg(long = "critiques")]
    critiques: Vec<String>,
    #[arg(long, default_value_t = annotate::DEFAULT_REQUIRED_RATERS)]
    required_raters: usize,
    #[arg(long, default_value_t = 1000)]
    snapshot_every: usize,
}

/// Parses `argv` (program name first) and runs the command.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn run(command: Command, argv: &[String]) -> Result<(), Failure> {
    match command {
        Command::Ingest(a) => ingest(a, argv),
        Command::Stats(a) => stats(a, argv),
        Command::Judge(a) => judge(a, argv),
        Command::Rank(a) => rank(a, argv),
        Command::Revise(a) => revise_cmd(a, argv),
        Command::Serve(a) => serve(a),
    }
}

/// Everything needed to repeat a run.
#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    argv: Vec<String>,
    tool_version: &'static str,
    revision_template_version: u32,
    seed: u64,
    config: Option<FileDigest>,
    inputs: Vec<FileDigest>,
    outputs: Vec<String>,
    started_at: String,
    finished_at: String,
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

fn digest(path: &Path) -> Result<FileDigest, Failure> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

struct RunContext {
    command: &'static str,
    argv: Vec<String>,
    config: RunConfig,
    config_path: Option<PathBuf>,
    seed: u64,
    started_at: String,
    inputs: Vec<FileDigest>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunContext {
    fn new(command: &'static str, argv: &[String], common: &Common) -> Result<Self, Failure> {
        let config = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let seed = common.seed.unwrap_or(config.seed);
        Ok(Self {
            command,
            argv: argv.to_vec(),
            config,
            config_path: common.config.clone(),
            seed,
            started_at: now(),
            inputs: Vec::new(),
        })
    }

    fn base_dir(&self) -> PathBuf {
        self.config_path
            .as_deref()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    }

    fn input(&mut self, path: &Path) -> Result<(), Failure> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    /// Config paths are relative to the config file.
    fn config_path_of(&self, path: &Option<PathBuf>) -> Option<PathBuf> {
        path.as_ref().map(|p| self.base_dir().join(p))
    }

    fn corpus_path(&self, explicit: &Option<PathBuf>) -> Result<PathBuf, Failure> {
        explicit
            .clone()
            .or_else(|| self.config_path_of(&self.config.paths.corpus))
            .ok_or_else(|| "no corpus given (use --corpus or paths.corpus in the config)".into())
    }

    fn output_path(&self, explicit: &Option<PathBuf>) -> Option<PathBuf> {
        explicit.clone().or_else(|| self.config_path_of(&self.config.paths.output))
    }

    fn backend(&self, name: &str) -> Result<Box<dyn Backend>, Failure> {
        let spec = self.config.backend(name)?;
        Ok(build_backend(spec, &self.base_dir())?)
    }

    /// Writes the manifest to `explicit`, else next to the first output,
    /// else to stderr.
    fn finish(self, outputs: &[PathBuf], explicit: &Option<PathBuf>) -> Result<(), Failure> {
        let manifest = Manifest {
            command: self.command.to_string(),
            argv: self.argv,
            tool_version: env!("CARGO_PKG_VERSION"),
            revision_template_version: REVISION_TEMPLATE_VERSION,
            seed: self.seed,
            config: self.config_path.as_deref().map(digest).transpose()?,
            inputs: self.inputs,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            started_at: self.started_at,
            finished_at: now(),
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        let target = explicit.clone().or_else(|| {
            outputs.first().map(|p| {
                if p.is_dir() {
                    p.join("manifest.json")
                } else {
                    let mut s = p.clone().into_os_string();
                    s.push(".manifest.json");
                    PathBuf::from(s)
                }
            })
        });
        match target {
            Some(path) => std::fs::write(&path, json + "\n").map_err(|e| format!("{}: {e}", path.display()))?,
            None => eprintln!("{json}"),
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| format!("{}: {e}", path.display()))?))
}

fn load_records(path: &Path) -> Result<Vec<CaptionRecord>, Failure> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(parse_corpus(file).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn load_judgments(path: &Path) -> Result<Vec<CaptionJudgment>, Failure> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(read_judgments(file).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn ingest(a: IngestArgs, argv: &[String]) -> Result<(), Failure> {
    let mut ctx = RunContext::new("ingest", argv, &a.common)?;
    ctx.input(&a.input)?;
    let file = File::open(&a.input).map_err(|e| format!("{}: {e}", a.input.display()))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| format!("line {}: malformed record: {e}", i + 1))?;
        // raw paragraphs get segmented here
        if let Some(obj) = value.as_object_mut() {
            if !obj.contains_key("sentences") {
                let text = obj.get("text").and_then(|t| t.as_str()).unwrap_or_default();
                let spans = crate::prompt::segment_sentences(text);
                obj.insert("sentences".into(), serde_json::to_value(spans)?);
            }
        }
        let record: CaptionRecord =
            serde_json::from_value(value).map_err(|e| format!("line {}: malformed record: {e}", i + 1))?;
        record.validate().map_err(|e| format!("line {}: {e}", i + 1))?;
        records.push(record);
    }
    let n_sentences: usize = records.iter().map(CaptionRecord::sentence_count).sum();
    let n_annotations: usize = records.iter().map(|r| r.annotations.len()).sum();
    eprintln!(
        "ingested {} records, {n_sentences} sentences, {n_annotations} annotations",
        records.len()
    );
    let out = ctx.output_path(&a.out);
    if let Some(out) = &out {
        write_corpus(&records, create(out)?)?;
    }
    ctx.finish(&out.into_iter().collect::<Vec<_>>(), &a.common.manifest)
}

/// Per-model rows (model-name order) followed by the TOTAL row.
pub fn stats_rows(records: &[CaptionRecord]) -> Result<Vec<ModelStats>, Failure> {
    let aggregated = aggregate_corpus(records)?;
    let models: std::collections::BTreeSet<&str> = records.iter().map(|r| r.model_name.as_str()).collect();
    let mut rows = Vec::new();
    for m in models {
        rows.push(corpus_stats(records, &aggregated, m)?);
    }
    if !records.is_empty() {
        rows.push(total_stats(records, &aggregated)?);
    }
    Ok(rows)
}

pub fn render_stats(rows: &[ModelStats]) -> String {
    let width = rows.iter().map(|r| r.model_name.chars().count()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>6}  {:>10}  {:>9}  {:>10}  {:>9}  {:>11}",
        "model", "n_desc", "desc_len", "sentences", "sent_len", "%correct", "uni_bigrams"
    );
    for r in rows {
        let pct = r
            .pct_correct_sentences
            .map(|p| format!("{p:.1}"))
            .unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            s,
            "{:<width$}  {:>6}  {:>10.1}  {:>9.2}  {:>10.1}  {:>9}  {:>11}",
            r.model_name, r.n_descriptions, r.desc_len_avg, r.sentences_avg, r.sentence_len_avg, pct, r.unique_bigrams
        );
    }
    s
}

fn stats(a: StatsArgs, argv: &[String]) -> Result<(), Failure> {
    let mut ctx = RunContext::new("stats", argv, &a.common)?;
    let path = ctx.corpus_path(&a.corpus)?;
    ctx.input(&path)?;
    let rows = stats_rows(&load_records(&path)?)?;
    let outputs = match &a.out {
        Some(out) => {
            let mut w = create(out)?;
            for r in &rows {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
            vec![out.clone()]
        }
        None => {
            print!("{}", render_stats(&rows));
            Vec::new()
        }
    };
    ctx.finish(&outputs, &a.common.manifest)
}

fn judge(a: JudgeArgs, argv: &[String]) -> Result<(), Failure> {
    let mut ctx = RunContext::new("judge", argv, &a.common)?;
    let path = ctx.corpus_path(&a.corpus)?;
    ctx.input(&path)?;
    let records = load_records(&path)?;
    let backend = ctx.backend(&a.backend)?;
    let opts = JudgeOptions {
        with_critique: a.with_critique,
        keep_partial: a.keep_partial,
        seed: ctx.seed,
        workers: None,
    };
    let results = parallel_map(&records, ctx.config.parallelism, |_, r| judge_caption(backend.as_ref(), r, &opts));
    let judgments: Vec<CaptionJudgment> = results.into_iter().collect::<Result<_, _>>()?;
    let out = ctx
        .output_path(&a.out)
        .or_else(|| ctx.config_path_of(&ctx.config.paths.judgments))
        .ok_or("no output path (use --out)")?;
    write_judgments(&judgments, create(&out)?)?;
    let n_inaccurate: usize = judgments
        .iter()
        .flat_map(|c| &c.judgments)
        .filter(|j| j.label == crate::classify::SentenceLabel::Inaccurate)
        .count();
    eprintln!("judged {} captions, {n_inaccurate} inaccurate sentences", judgments.len());
    ctx.finish(&[out], &a.common.manifest)
}

/// True when the first record of a JSON Lines file has an `annotations`
/// key, i.e. the file is a corpus rather than judgments.
fn looks_like_corpus(path: &Path) -> Result<bool, Failure> {
    let file = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)?;
        return Ok(v.get("annotations").is_some());
    }
    Ok(false)
}

fn rank(a: RankArgs, argv: &[String]) -> Result<(), Failure> {
    let mut ctx = RunContext::new("rank", argv, &a.common)?;
    let criteria = Criterion::parse_selection(&a.criterion)?;
    let mut boards = Vec::new();
    if let Some(published) = &a.published {
        ctx.input(published)?;
        let tables = PublishedTables::load(published)?;
        let method = a.method.as_deref().expect("clap requires --method");
        for c in criteria {
            let table = tables
                .table(c)
                .ok_or_else(|| format!("{}: no table for criterion {}", published.display(), c.slug()))?;
            boards.push(table.leaderboard(method)?);
        }
    } else {
        let jpath = a.judgments.as_ref().ok_or("rank needs --judgments or --published")?;
        let rpath = a.reference.as_ref().ok_or("rank needs --reference with --judgments")?;
        ctx.input(jpath)?;
        ctx.input(rpath)?;
        let auto = autorater::criteria_by_model(&load_judgments(jpath)?)?;
        let reference = if looks_like_corpus(rpath)? {
            autorater::human_criteria(&load_records(rpath)?)?
        } else {
            autorater::criteria_by_model(&load_judgments(rpath)?)?
        };
        for c in criteria {
            boards.push(build_leaderboard(&auto, c, &reference)?);
        }
    }

    std::fs::create_dir_all(&a.out)?;
    let mut outputs = Vec::new();
    for b in &boards {
        let report = leaderboard_report(std::slice::from_ref(b));
        for (ext, body) in [("json", &report.json), ("txt", &report.text)] {
            let path = a.out.join(format!("leaderboard_{}.{ext}", b.criterion.slug()));
            std::fs::write(&path, body)?;
            outputs.push(path);
        }
    }
    print!("{}", leaderboard_report(&boards).text);
    let mut all = vec![a.out.clone()];
    all.extend(outputs);
    ctx.finish(&all, &a.common.manifest)
}

fn revise_cmd(a: ReviseArgs, argv: &[String]) -> Result<(), Failure> {
    let mut ctx = RunContext::new("revise", argv, &a.common)?;
    let path = ctx.corpus_path(&a.corpus)?;
    ctx.input(&path)?;
    let records = load_records(&path)?;
    let critic = ctx.backend(&a.critic)?;
    let reviser = ctx.backend(&a.reviser)?;
    let opts = ReviseOptions {
        seed: ctx.seed,
        workers: None,
    };
    let revised: Vec<revise::RevisedCaption> =
        revise::revise_corpus(critic.as_ref(), reviser.as_ref(), &records, ctx.config.parallelism, &opts)
            .into_iter()
            .collect::<Result<_, _>>()?;
    let out = ctx.output_path(&a.out).ok_or("no output path (use --out)")?;
    let mut w = create(&out)?;
    for r in &revised {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let n_edits: usize = revised.iter().map(|r| r.edits.len()).sum();
    let n_applied: usize = revised.iter().map(|r| r.applied().count()).sum();
    eprintln!("revised {} captions: {n_applied} of {n_edits} edits applied", revised.len());

    let mut outputs = vec![out.clone()];
    if a.self_judge {
        let with_edits: Vec<&revise::RevisedCaption> = revised.iter().filter(|r| !r.edits.is_empty()).collect();
        let reports = parallel_map(&with_edits, ctx.config.parallelism, |_, r| {
            revise::self_judge(critic.as_ref(), r, &opts)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        let report = PipelineReport::merge(&reports)?;
        let report_path = a.report.clone().unwrap_or_else(|| {
            let mut s = out.clone().into_os_string();
            s.push(".report.json");
            PathBuf::from(s)
        });
        std::fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
        eprintln!(
            "self-judge: {} flagged, fixed {:.1}%, delta {:+.1}%",
            report.n_flagged,
            100.0 * report.fixed_accurate_pct,
            100.0 * report.delta
        );
        outputs.push(report_path);
    }
    ctx.finish(&outputs, &a.common.manifest)
}

fn serve(a: ServeArgs) -> Result<(), Failure> {
    let token = std::env::var(annotate::TOKEN_ENV)
        .map_err(|_| format!("set {} to the bearer token raters will use", annotate::TOKEN_ENV))?;
    let store = Store::open(
        &a.data,
        StoreOptions {
            snapshot_every: a.snapshot_every,
            sync: true,
        },
    )?;
    if let Some(corpus) = &a.corpus {
        let kind: TaskKind = a.kind.parse()?;
        let records = load_records(corpus)?;
        let mut sources = Vec::new();
        for spec in &a.critiques {
            let (critic, path) = spec
                .split_once('=')
                .ok_or_else(|| format!("--critiques expects critic=path, got `{spec}`"))?;
            sources.push(CriticJudgments {
                critic: critic.to_string(),
                judgments: load_judgments(Path::new(path))?,
            });
        }
        let opts = CreateOptions {
            required_raters: a.required_raters,
            critiques: (!sources.is_empty()).then_some(sources.as_slice()),
        };
        let created = store.create_tasks(&records, kind, &opts)?;
        eprintln!("created {created} {} tasks", kind.as_str());
    }
    let progress: BTreeMap<&str, annotate::KindProgress> =
        store.progress().into_iter().map(|(k, v)| (k.as_str(), v)).collect();
    eprintln!("serving on http://{} ({progress:?})", a.addr);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(annotate::serve(
        Arc::new(store),
        ServeOptions {
            addr: a.addr,
            token,
            static_dir: a.static_dir,
        },
    ))?;
    Ok(())
}
