use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use mcqa_engine::config::Config;
use mcqa_engine::corpus::{self, CorpusStore};
use mcqa_engine::dataset::{load_dataset, DatasetFormat};
use mcqa_engine::harness::{self, RunSummary};
use mcqa_engine::pipeline::Mode;

#[derive(Parser)]
#[command(name = "mcqa", version, about = "Retrieval and generation evidence pipeline for multiple-choice medical QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest corpus files into the snippet store.
    Index(IndexArgs),
    /// Answer a dataset and write records plus a summary.
    Run(RunArgs),
    /// Score a records file against a dataset.
    Score(ScoreArgs),
    /// Render summaries as a comparison table.
    Report(ReportArgs),
    /// Lint a config, corpus files and datasets without running anything.
    Validate(ValidateArgs),
}

/// `LABEL=PATH` pair naming one corpus file and its source.
#[derive(Clone, Debug)]
struct SourceFile {
    label: String,
    path: PathBuf,
}

fn parse_source_file(s: &str) -> Result<SourceFile, String> {
    let (label, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected LABEL=PATH, got {s:?}"))?;
    Ok(SourceFile {
        label: label.to_string(),
        path: PathBuf::from(path),
    })
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Store directory; defaults to `[retrieval] corpus_dir`.
    #[arg(long)]
    corpus_dir: Option<PathBuf>,
    /// Corpus file as LABEL=PATH. Repeatable.
    #[arg(long = "source", value_parser = parse_source_file, required = true)]
    sources: Vec<SourceFile>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `[run] mode`.
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    format: Option<DatasetFormat>,
    /// Only the first N questions.
    #[arg(long)]
    limit: Option<usize>,
    /// Discard existing records instead of resuming.
    #[arg(long)]
    fresh: bool,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "canonical")]
    format: DatasetFormat,
    /// Write the summary JSON here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Summary JSON files, one table row each.
    #[arg(required = true)]
    summaries: Vec<PathBuf>,
    /// Write the machine-readable report here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus file as LABEL=PATH. Repeatable.
    #[arg(long = "source", value_parser = parse_source_file)]
    sources: Vec<SourceFile>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    format: Option<DatasetFormat>,
}

fn index(args: IndexArgs) -> Result<()> {
    let config = args.config.as_deref().map(Config::load).transpose()?;
    let dir = args
        .corpus_dir
        .or_else(|| config.as_ref().and_then(Config::corpus_dir))
        .context("no store directory: pass --corpus-dir or set [retrieval] corpus_dir")?;
    let mut store = CorpusStore::open(&dir).with_context(|| format!("opening store {}", dir.display()))?;
    for src in &args.sources {
        let report = store
            .ingest(&src.path, &src.label)
            .with_context(|| format!("ingesting {} as {}", src.path.display(), src.label))?;
        println!("{}: {} snippet(s) ingested, {} rejected", src.label, report.ingested, report.rejects.len());
        if !report.rejects.is_empty() {
            let path = dir.join(format!("rejects-{}.jsonl", src.label));
            corpus::write_rejects(&path, &report.rejects)?;
            println!("  rejects written to {}", path.display());
        }
    }
    let stats = store.stats();
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let config = Config::load(&args.config)?;
    let mode = args.mode.unwrap_or(config.run.mode);
    let dataset = args
        .dataset
        .or_else(|| config.dataset_path())
        .context("no dataset: pass --dataset or set [run] dataset")?;
    let format = args.format.unwrap_or(config.run.format);
    let expected = if args.limit.is_none() { config.run.expected_count } else { None };
    let loaded = load_dataset(&dataset, format, expected)?;
    for r in &loaded.rejects {
        log::warn!("{}:{}: {}", dataset.display(), r.line, r.reason);
    }
    let mut questions = loaded.questions;
    if let Some(n) = args.limit {
        questions.truncate(n);
    }
    let pipeline = config.build_pipeline(mode)?;
    let mut run_config = config.run_config(mode);
    run_config.resume = !args.fresh;
    let summary = harness::run(&pipeline, &questions, &run_config)?;
    print!("{}", harness::report(std::slice::from_ref(&summary)));
    println!("records: {}", run_config.records_path().display());
    println!("summary: {}", run_config.summary_path().display());
    Ok(())
}

fn score(args: ScoreArgs) -> Result<()> {
    let loaded = load_dataset(&args.dataset, args.format, None)?;
    let summary = harness::score(&args.records, &loaded.questions)?;
    match args.output {
        Some(path) => {
            harness::write_summary(&path, &summary)?;
            print!("{}", harness::report(std::slice::from_ref(&summary)));
        }
        None => println!("{}", serde_json::to_string_pretty(&summary)?),
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let summaries = args
        .summaries
        .iter()
        .map(|p| harness::read_summary(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<RunSummary>>>()?;
    print!("{}", harness::report(&summaries));
    if let Some(path) = args.json {
        let mut text = serde_json::to_string_pretty(&harness::report_json(&summaries))?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Checks a corpus file line by line without touching any store.
fn lint_corpus(path: &Path, label: &str) -> Result<usize> {
    corpus::validate_source_label(label)?;
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut problems = 0;
    let mut ok = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        match corpus::parse_record(&line, label, line_no) {
            Ok(s) => {
                if let Some(first) = seen.insert(s.doc_id.clone(), line_no) {
                    println!("{}:{line_no}: duplicate id {:?} (first at line {first})", path.display(), s.doc_id);
                    problems += 1;
                } else {
                    ok += 1;
                }
            }
            Err(reason) => {
                println!("{}:{line_no}: {reason}", path.display());
                problems += 1;
            }
        }
    }
    println!("{}: {ok} valid snippet(s), {problems} problem(s)", path.display());
    Ok(problems)
}

fn validate(args: ValidateArgs) -> Result<bool> {
    let mut problems = 0usize;
    let config = args.config.as_deref().map(Config::load).transpose()?;
    if let Some(c) = &config {
        let mode = c.run.mode;
        let missing = c.missing_roles(mode)?;
        if missing.is_empty() {
            println!("config: roles for mode {mode} are configured");
        } else {
            for role in missing {
                println!("config: mode {mode} calls role {role}, which is not configured");
                problems += 1;
            }
        }
        if let Err(e) = c.build_gateway() {
            println!("config: {e}");
            problems += 1;
        }
        if mode.uses_retrieval() {
            match c.corpus_dir() {
                Some(dir) => match CorpusStore::open(&dir) {
                    Ok(s) if s.is_empty() => {
                        println!("config: corpus store {} is empty", dir.display());
                        problems += 1;
                    }
                    Ok(s) => println!("config: corpus store has {} snippet(s)", s.len()),
                    Err(e) => {
                        println!("config: corpus store {}: {e}", dir.display());
                        problems += 1;
                    }
                },
                None => {
                    println!("config: mode {mode} needs [retrieval] corpus_dir");
                    problems += 1;
                }
            }
        }
    }
    for src in &args.sources {
        problems += lint_corpus(&src.path, &src.label)?;
    }
    let dataset = args.dataset.or_else(|| config.as_ref().and_then(Config::dataset_path));
    if let Some(path) = dataset {
        let format = args
            .format
            .or_else(|| config.as_ref().map(|c| c.run.format))
            .unwrap_or_default();
        let expected = config.as_ref().and_then(|c| c.run.expected_count);
        match load_dataset(&path, format, expected) {
            Ok(loaded) => {
                for r in &loaded.rejects {
                    println!("{}:{}: {}", path.display(), r.line, r.reason);
                }
                problems += loaded.rejects.len();
                let unlabeled = loaded.questions.iter().filter(|q| q.gold.is_none()).count();
                println!(
                    "{}: {} question(s) ({format}), {} without gold label",
                    path.display(),
                    loaded.questions.len(),
                    unlabeled
                );
            }
            Err(e) => {
                println!("{e}");
                problems += 1;
            }
        }
    }
    if problems == 0 {
        println!("ok");
    } else {
        println!("{problems} problem(s)");
    }
    Ok(problems == 0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Index(a) => index(a).map(|_| true),
        Command::Run(a) => run(a).map(|_| true),
        Command::Score(a) => score(a).map(|_| true),
        Command::Report(a) => report(a).map(|_| true),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
