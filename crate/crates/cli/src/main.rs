//! `tkg`: one subcommand per pipeline stage.

mod config;
mod output;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use tkg_core::backends::{AnnotatorKind, ArbiterKind, Backends, SamplerKind, Templates};
use tkg_core::corpus::{apply_filters, build_timeline, generate_synthetic_corpus, read_records, DropReason, read_timeline, write_records, SynthParams};
use tkg_core::exec::Execution;
use tkg_core::extractor::ExtractionConfig;
use tkg_core::inference::{backtest, enumerate_hypotheses, PathPattern};
use tkg_core::metrics::{evaluate, Judgment, LabelSpace};
use tkg_core::pipeline::ingest;
use tkg_core::retrieval::{evaluate_qa, QaItem, RagConfig};
use tkg_core::store::{load_snapshot, save_snapshot, Graph, GraphStats};

use config::RunConfig;
use output::{report_path, write_atomic, write_jsonl_atomic, write_report, Report};

#[derive(Parser)]
#[command(name = "tkg", version, about = "Temporal biomedical knowledge graph pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Primary output file (or directory for `synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a raw record file into a chronological timeline.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate a synthetic corpus, ground truth and matching scripted backends.
    Synth {
        #[arg(long, default_value_t = 60)]
        entities: usize,
        #[arg(long, default_value_t = 40)]
        truth: usize,
        #[arg(long, default_value_t = 200)]
        abstracts: usize,
    },
    /// Extract triples from a timeline and build a graph snapshot.
    Ingest {
        #[arg(long)]
        timeline: Option<PathBuf>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Node, edge and confidence statistics of a snapshot.
    Stats {
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Answer a multiple-choice question file against a snapshot.
    Rag {
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        qa: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Answer without graph evidence.
        #[arg(long)]
        no_retrieval: bool,
    },
    /// Rank unreported chemical–disease treatment hypotheses.
    Infer {
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        cutoff: Option<NaiveDate>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_enum, default_value_t = Pattern::NegativePositive)]
        pattern: Pattern,
    },
    /// Predict from evidence up to a cutoff and check later confirmations.
    Backtest {
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        cutoff: Option<NaiveDate>,
        #[arg(long, value_enum, default_value_t = Pattern::NegativePositive)]
        pattern: Pattern,
    },
    /// Validity, precision/recall and agreement over judgment files.
    Eval {
        #[arg(long, required = true, num_args = 1..)]
        judgments: Vec<PathBuf>,
        /// Rater whose labels serve as the reference for precision and recall.
        #[arg(long)]
        reference: Option<String>,
        #[arg(long, value_enum, default_value_t = Space::Binary)]
        label_space: Space,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Preprocess { .. } => "preprocess",
            Command::Synth { .. } => "synth",
            Command::Ingest { .. } => "ingest",
            Command::Stats { .. } => "stats",
            Command::Rag { .. } => "rag",
            Command::Infer { .. } => "infer",
            Command::Backtest { .. } => "backtest",
            Command::Eval { .. } => "eval",
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Pattern {
    /// Chemical lowers a gene that rises with the disease.
    NegativePositive,
    /// Chemical raises a gene that falls with the disease.
    PositiveNegative,
}

impl Pattern {
    fn path_pattern(self) -> PathPattern {
        match self {
            Pattern::NegativePositive => PathPattern::negative_then_positive(),
            Pattern::PositiveNegative => PathPattern::positive_then_negative(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Binary,
    FourLevel,
}

struct Ctx {
    cfg: RunConfig,
    out: Option<PathBuf>,
}

impl Ctx {
    fn exec(&self) -> Execution {
        match self.cfg.workers {
            Some(n) => Execution::default().with_workers(n),
            None => Execution::default(),
        }
    }

    /// A path from the command line, else one from the config file resolved
    /// against the config's directory.
    fn path(&self, flag: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        flag.or_else(|| configured.as_ref().map(|p| self.cfg.base_dir.join(p)))
            .ok_or_else(|| anyhow!("no {what} given; pass a flag or set it in the config"))
    }

    fn snapshot(&self, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.path(flag, &self.cfg.paths.snapshot, "snapshot")
    }

    /// Where a command's report goes when `--out` is absent.
    fn report_out(&self, command: &str) -> Option<PathBuf> {
        self.out
            .clone()
            .or_else(|| self.cfg.paths.reports.as_ref().map(|d| self.cfg.base_dir.join(d).join(format!("{command}.json"))))
    }

    fn backends(&self) -> Result<(Backends, Templates)> {
        Ok(self.cfg.backends.build(&self.cfg.base_dir, self.cfg.seed)?)
    }

    fn cutoff(&self, flag: Option<NaiveDate>) -> Result<NaiveDate> {
        flag.or(self.cfg.pipeline.cutoff).ok_or_else(|| anyhow!("no cutoff given; pass --cutoff or set pipeline.cutoff"))
    }
}

fn load_graph(path: &Path) -> Result<Graph> {
    let (header, graph) = load_snapshot(path).with_context(|| format!("loading snapshot {}", path.display()))?;
    if let Some(marker) = header.partial {
        log::warn!("{} is a partial snapshot: {marker}", path.display());
    }
    Ok(graph)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(cli.common.config.as_deref())?;
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(w) = cli.common.workers {
        cfg.workers = Some(w);
    }
    let stage = cli.command.stage();
    cfg.validate().context(stage)?;
    let ctx = Ctx { cfg, out: cli.common.out };
    dispatch(ctx, cli.command).context(stage)
}

fn dispatch(mut ctx: Ctx, command: Command) -> Result<ExitCode> {
    match command {
        Command::Preprocess { input } => preprocess(&ctx, &input),
        Command::Synth { entities, truth, abstracts } => synth(&ctx, entities, truth, abstracts),
        Command::Ingest { timeline, samples, threshold } => {
            if let Some(n) = samples {
                ctx.cfg.pipeline.n_samples = n;
            }
            if let Some(t) = threshold {
                ctx.cfg.pipeline.confidence_threshold = t;
            }
            ctx.cfg.validate()?;
            cmd_ingest(&ctx, timeline)
        }
        Command::Stats { snapshot } => {
            let graph = load_graph(&ctx.snapshot(snapshot)?)?;
            write_report(ctx.report_out("stats").as_deref(), &Report::new(&ctx.cfg, GraphStats::of(&graph)))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Rag { snapshot, qa, k, no_retrieval } => {
            if let Some(k) = k {
                ctx.cfg.pipeline.top_k = k;
            }
            ctx.cfg.validate()?;
            rag(&ctx, snapshot, &qa, !no_retrieval)
        }
        Command::Infer { snapshot, cutoff, limit, pattern } => {
            if let Some(l) = limit {
                ctx.cfg.pipeline.limit = l;
            }
            ctx.cfg.pipeline.cutoff = Some(ctx.cutoff(cutoff)?);
            let graph = load_graph(&ctx.snapshot(snapshot)?)?;
            let hypotheses = enumerate_hypotheses(
                &graph,
                &pattern.path_pattern(),
                ctx.cutoff(None)?,
                ctx.cfg.pipeline.limit,
                ctx.exec(),
            );
            #[derive(Serialize)]
            struct InferReport<T> {
                pattern: Pattern,
                hypotheses: T,
            }
            let report = Report::new(&ctx.cfg, InferReport { pattern, hypotheses });
            write_report(ctx.report_out("infer").as_deref(), &report)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Backtest { snapshot, cutoff, pattern } => {
            ctx.cfg.pipeline.cutoff = Some(ctx.cutoff(cutoff)?);
            let graph = load_graph(&ctx.snapshot(snapshot)?)?;
            let result = backtest(&graph, &pattern.path_pattern(), ctx.cutoff(None)?, ctx.exec());
            if !result.eligible {
                log::warn!("no evidence after the cutoff; nothing can be confirmed");
            }
            write_report(ctx.report_out("backtest").as_deref(), &Report::new(&ctx.cfg, result))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { judgments, reference, label_space } => {
            let mut all: Vec<Judgment> = Vec::new();
            for path in &judgments {
                all.extend(read_jsonl::<Judgment>(path)?);
            }
            let space = match label_space {
                Space::Binary => LabelSpace::Binary,
                Space::FourLevel => LabelSpace::FourLevel,
            };
            let result = evaluate(&all, reference.as_deref(), space)?;
            write_report(ctx.report_out("eval").as_deref(), &Report::new(&ctx.cfg, result))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn preprocess(ctx: &Ctx, input: &Path) -> Result<ExitCode> {
    let out = ctx.path(ctx.out.clone(), &ctx.cfg.paths.corpus, "output timeline (--out)")?;
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let (records, malformed) = read_records(BufReader::new(file))?;
    for e in &malformed {
        log::warn!("{}: {e}", input.display());
    }
    let n_read = records.len();
    let (kept, filters) = apply_filters(records);
    let timeline = build_timeline(kept)?;
    let mut bytes = Vec::new();
    write_records(&mut bytes, timeline.records())?;
    write_atomic(&out, &bytes)?;

    #[derive(Serialize)]
    struct PreprocessReport {
        input: PathBuf,
        records_read: usize,
        retained: usize,
        dropped: BTreeMap<DropReason, usize>,
        malformed: Vec<String>,
        days: usize,
    }
    let report = PreprocessReport {
        input: input.to_path_buf(),
        records_read: n_read,
        retained: filters.retained,
        dropped: filters.dropped,
        malformed: malformed.iter().map(ToString::to_string).collect(),
        days: timeline.days().len(),
    };
    write_report(Some(&report_path(&out)), &Report::new(&ctx.cfg, report))?;
    Ok(ExitCode::SUCCESS)
}

fn synth(ctx: &Ctx, entities: usize, truth: usize, abstracts: usize) -> Result<ExitCode> {
    let dir = ctx.out.clone().ok_or_else(|| anyhow!("synth needs --out <directory>"))?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let corpus = generate_synthetic_corpus(&SynthParams::new(ctx.cfg.seed, entities, truth, abstracts))?;

    let mut buf = Vec::new();
    write_records(&mut buf, corpus.timeline.records())?;
    write_atomic(&dir.join("timeline.jsonl"), &buf)?;
    buf.clear();
    corpus.truth.write_jsonl(&mut buf)?;
    write_atomic(&dir.join("truth.jsonl"), &buf)?;
    buf.clear();
    corpus.write_dictionary(&mut buf)?;
    write_atomic(&dir.join("dictionary.jsonl"), &buf)?;
    buf.clear();
    corpus.write_sampler_script(&mut buf)?;
    write_atomic(&dir.join("sampler.jsonl"), &buf)?;

    // A config that ingests this corpus fully offline.
    let mut run = ctx.cfg.clone();
    run.paths.corpus = Some("timeline.jsonl".into());
    run.paths.snapshot = Some("graph.jsonl".into());
    run.backends.annotator = Some(AnnotatorKind::Dictionary { path: "dictionary.jsonl".into() });
    run.backends.sampler = SamplerKind::Scripted { path: Some("sampler.jsonl".into()) };
    run.backends.arbiter = ArbiterKind::Policy;
    write_atomic(&dir.join("run.toml"), toml::to_string(&run)?.as_bytes())?;
    println!(
        "wrote {} abstracts, {} truth triples and {} entities to {}",
        corpus.timeline.len(),
        corpus.truth.triples.len(),
        corpus.entities.len(),
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_ingest(ctx: &Ctx, timeline: Option<PathBuf>) -> Result<ExitCode> {
    let timeline_path = ctx.path(timeline, &ctx.cfg.paths.corpus, "timeline (--timeline)")?;
    let out = ctx.snapshot(ctx.out.clone())?;
    let file = File::open(&timeline_path).with_context(|| format!("opening {}", timeline_path.display()))?;
    let timeline = read_timeline(BufReader::new(file)).with_context(|| format!("reading {}", timeline_path.display()))?;
    let (backends, templates) = ctx.backends()?;
    let config = ExtractionConfig {
        sampler: ctx.cfg.extraction_sampler(),
        threshold: ctx.cfg.pipeline.confidence_threshold,
        templates,
    };
    let outcome = ingest(
        Graph::new(),
        &timeline,
        &backends,
        &config,
        &ctx.cfg.arbitration_sampler(),
        ctx.exec(),
        ctx.cfg.pipeline.batch,
    );
    let marker = outcome.error.as_ref().map(|e| format!("ingestion stopped: {e}"));
    save_snapshot(&outcome.graph, &out, marker.as_deref())?;
    write_jsonl_atomic(&out.with_extension("log.jsonl"), &outcome.log)?;

    #[derive(Serialize)]
    struct IngestReport<'a> {
        timeline: &'a Path,
        snapshot: &'a Path,
        abstracts_in_timeline: usize,
        summary: tkg_core::pipeline::IngestSummary,
        nodes: usize,
        edges: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<&'a str>,
    }
    let report = IngestReport {
        timeline: &timeline_path,
        snapshot: &out,
        abstracts_in_timeline: timeline.len(),
        summary: outcome.summary,
        nodes: outcome.graph.node_count(),
        edges: outcome.graph.edge_count(),
        error: marker.as_deref(),
    };
    write_report(Some(&report_path(&out)), &Report::new(&ctx.cfg, report))?;
    match marker {
        Some(m) => bail!("{m}; partial snapshot written to {}", out.display()),
        None => Ok(ExitCode::SUCCESS),
    }
}

fn rag(ctx: &Ctx, snapshot: Option<PathBuf>, qa: &Path, use_retrieval: bool) -> Result<ExitCode> {
    let graph = load_graph(&ctx.snapshot(snapshot)?)?;
    let items: Vec<QaItem> = read_jsonl(qa)?;
    let (backends, templates) = ctx.backends()?;
    let config = RagConfig {
        k: ctx.cfg.pipeline.top_k,
        use_retrieval,
        min_similarity: ctx.cfg.pipeline.min_similarity,
        rerank: ctx.cfg.arbitration_sampler(),
        answer: ctx.cfg.arbitration_sampler(),
    };
    let result = evaluate_qa(&items, &graph, &backends, &templates, &config, ctx.exec())?;
    #[derive(Serialize)]
    struct RagReport<T> {
        use_retrieval: bool,
        #[serde(flatten)]
        result: T,
    }
    write_report(ctx.report_out("rag").as_deref(), &Report::new(&ctx.cfg, RagReport { use_retrieval, result }))?;
    Ok(ExitCode::SUCCESS)
}
