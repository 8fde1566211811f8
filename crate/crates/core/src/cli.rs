//! Command surface: ingest → index → synthesize → blend → export, plus
//! evaluate and stats.
//!
//! Every command writes into its own directory under `output_dir` and
//! finishes by writing `digest.json`, a hash of the configuration that
//! produced the outputs chained with the upstream stage's digest. Downstream
//! commands recompute the digest they expect and refuse to mix stale
//! artifacts.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::blending::{self, export_jsonl, read_records, TrainingRecord};
use crate::config::{digest, file_digest, BackendChoice, ConfigError, RetrieverKind, RunConfig};
use crate::corpus::{self, chunk_all, Document, IngestFormat};
use crate::evaluation::{self, load_items};
use crate::generation::{Backend, MockBackend, Prompter, RemoteBackend};
use crate::retrieval::{Bm25Index, PassageStore, RemoteRetriever, Retriever};
use crate::synthesis::{run_stage2, Generator, SynthesisReport, SyntheticExample, TaskType};

#[derive(Debug, Parser)]
#[command(
    name = "rag-selftrain",
    version,
    about = "Synthesize, filter, blend and evaluate RAG training data"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "rag-selftrain.toml")]
    pub config: PathBuf,
    /// Override the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override the configured generation backend.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendChoice>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read documents and chunk them into passages.
    Ingest,
    /// Build the retrieval index over the passages.
    Index,
    /// Generate and filter pseudo-labeled examples.
    Synthesize {
        /// Also write dropped examples to synth/rejects.jsonl.
        #[arg(long)]
        keep_rejects: bool,
    },
    /// Mix synthetic and external records by ratio.
    Blend,
    /// Write the loss-masked training file and its manifest.
    Export,
    /// Score the backend on evaluation items.
    Evaluate {
        /// Items file, overriding `evaluation.items`.
        #[arg(long)]
        items: Option<PathBuf>,
    },
    /// Print summaries of whatever artifacts exist.
    Stats,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Fatal(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Fatal(_) => 1,
        }
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(ConfigError::Invalid(msg.into()))
}

/// Stage directories and the command that produces each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Corpus,
    Index,
    Synth,
    Blend,
    Export,
    Eval,
}

impl Stage {
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::Corpus => "corpus",
            Stage::Index => "index",
            Stage::Synth => "synth",
            Stage::Blend => "blend",
            Stage::Export => "export",
            Stage::Eval => "eval",
        }
    }

    pub fn command(self) -> &'static str {
        match self {
            Stage::Corpus => "ingest",
            Stage::Index => "index",
            Stage::Synth => "synthesize",
            Stage::Blend => "blend",
            Stage::Export => "export",
            Stage::Eval => "evaluate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDigest {
    pub stage: String,
    pub digest: String,
    pub upstream: Option<String>,
}

/// Held for the duration of a command; removes `.lock` on drop.
struct OutputLock(PathBuf);

impl OutputLock {
    fn acquire(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(anyhow!(
                "another command holds {} (delete it if no command is running)",
                path.display()
            )),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

struct Run {
    cfg: RunConfig,
}

impl Run {
    fn dir(&self, stage: Stage) -> PathBuf {
        self.cfg.output_dir.join(stage.dir_name())
    }

    fn corpus_digest(&self) -> anyhow::Result<String> {
        let mut inputs = Vec::new();
        for p in &self.cfg.corpus.paths {
            if p.is_dir() {
                let mut files: Vec<PathBuf> = fs::read_dir(p)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|f| f.extension().is_some_and(|x| x == "txt"))
                    .collect();
                files.sort();
                for f in files {
                    inputs.push(file_digest(&f)?);
                }
            } else {
                inputs.push(file_digest(p).with_context(|| format!("reading {}", p.display()))?);
            }
        }
        // Content, not locations: the same inputs under another directory
        // must reproduce the same digest.
        let c = &self.cfg.corpus;
        Ok(digest(&("corpus", c.format, c.window, c.stride, inputs)))
    }

    fn index_digest(&self) -> anyhow::Result<String> {
        let r = &self.cfg.retrieval;
        Ok(digest(&(
            "index",
            self.corpus_digest()?,
            r.kind,
            &r.endpoint,
        )))
    }

    /// Backend settings that can change generated text.
    fn backend_fingerprint(&self) -> impl Serialize + '_ {
        let b = &self.cfg.backend;
        (
            b.kind,
            &b.url,
            &b.model,
            b.mock_style,
            b.temperature,
            b.top_p,
            b.max_new_tokens,
        )
    }

    fn synth_digest(&self) -> anyhow::Result<String> {
        Ok(digest(&(
            "synthesize",
            self.index_digest()?,
            self.backend_fingerprint(),
            &self.cfg.synthesis,
            self.cfg.retrieval.k,
            self.cfg.retrieval.context_budget,
            self.cfg.seed,
        )))
    }

    fn blend_digest(&self) -> anyhow::Result<String> {
        let mut externals = Vec::new();
        let mut entries = self.cfg.blend_entries();
        for e in &mut entries {
            if let Some(p) = e.path.take().filter(|p| p.exists()) {
                externals.push((e.name.clone(), file_digest(&p)?));
            }
        }
        Ok(digest(&(
            "blend",
            self.synth_digest()?,
            entries,
            externals,
            self.cfg.blend.total,
            self.cfg.seed,
        )))
    }

    fn export_digest(&self) -> anyhow::Result<String> {
        Ok(digest(&("export", self.blend_digest()?)))
    }

    fn expected(&self, stage: Stage) -> anyhow::Result<String> {
        match stage {
            Stage::Corpus => self.corpus_digest(),
            Stage::Index => self.index_digest(),
            Stage::Synth => self.synth_digest(),
            Stage::Blend => self.blend_digest(),
            Stage::Export => self.export_digest(),
            Stage::Eval => bail!("evaluation has no downstream"),
        }
    }

    /// Fail unless `stage` was produced under the current configuration.
    fn require(&self, stage: Stage) -> anyhow::Result<()> {
        let path = self.dir(stage).join("digest.json");
        let Ok(text) = fs::read_to_string(&path) else {
            bail!(
                "missing {} artifacts in {}; run `{}` first",
                stage.dir_name(),
                self.dir(stage).display(),
                stage.command()
            );
        };
        let found: StageDigest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if found.digest != self.expected(stage)? {
            bail!(
                "{} artifacts in {} were built from a different configuration or input; rerun `{}`",
                stage.dir_name(),
                self.dir(stage).display(),
                stage.command()
            );
        }
        Ok(())
    }

    /// Create the stage directory and invalidate any previous digest, so a
    /// failed run never looks complete.
    fn begin(&self, stage: Stage) -> anyhow::Result<PathBuf> {
        let dir = self.dir(stage);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let d = dir.join("digest.json");
        if d.exists() {
            fs::remove_file(&d)?;
        }
        Ok(dir)
    }

    fn finish(&self, stage: Stage, digest: String, upstream: Option<String>) -> anyhow::Result<()> {
        let sd = StageDigest {
            stage: stage.dir_name().to_owned(),
            digest,
            upstream,
        };
        write_json(&self.dir(stage).join("digest.json"), &sd)
    }

    fn store(&self) -> anyhow::Result<PassageStore> {
        let path = self.dir(Stage::Corpus).join("passages.jsonl");
        PassageStore::load_jsonl(&path).with_context(|| format!("loading {}", path.display()))
    }

    fn retriever(&self, store: &PassageStore) -> anyhow::Result<Box<dyn Retriever>> {
        let r = &self.cfg.retrieval;
        Ok(match r.kind {
            RetrieverKind::Bm25 => {
                let path = self.dir(Stage::Index).join("bm25.idx");
                Box::new(
                    Bm25Index::load(&path)
                        .with_context(|| format!("loading {}", path.display()))?,
                )
            }
            RetrieverKind::Remote => Box::new(RemoteRetriever::new(
                r.endpoint.clone().unwrap_or_default(),
                self.cfg.backend.retry_policy(),
                store.passages().iter().map(|p| p.passage_id.clone()),
                self.cfg.backend.max_in_flight,
            )),
        })
    }

    fn backend(&self) -> Result<Box<dyn Backend>, CliError> {
        let b = &self.cfg.backend;
        Ok(match b.kind {
            BackendChoice::Mock => Box::new(MockBackend::new(b.mock_style)),
            BackendChoice::Remote => {
                let key = match &b.api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        config_error(format!(
                            "environment variable {var} (backend.api_key_env) is not set"
                        ))
                    })?),
                    None => None,
                };
                Box::new(RemoteBackend::new(
                    b.url.clone().unwrap_or_default(),
                    b.model.clone().unwrap_or_default(),
                    key,
                    b.retry_policy(),
                    b.max_in_flight,
                ))
            }
        })
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(
        fs::File::create(path).with_context(|| format!("writing {}", path.display()))?,
    );
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
struct IngestSummary {
    documents: usize,
    passages: usize,
    cross_file_duplicates: usize,
    files: Vec<(PathBuf, corpus::IngestReport)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlendSummary {
    total: usize,
    entries: Vec<(String, f64)>,
    counts: Vec<(String, usize)>,
    warnings: Vec<String>,
}

fn cmd_ingest(run: &Run) -> anyhow::Result<()> {
    let cfg = &run.cfg.corpus;
    let digest = run.corpus_digest()?;
    let dir = run.begin(Stage::Corpus)?;
    let mut docs: Vec<Document> = Vec::new();
    let mut files = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut cross = 0;
    for path in &cfg.paths {
        let (d, report) = corpus::ingest(path, cfg.format)?;
        for doc in d {
            if seen.insert(doc.doc_id.clone()) {
                docs.push(doc);
            } else {
                warn!(doc_id = %doc.doc_id, "document id repeats one from an earlier file, skipping");
                cross += 1;
            }
        }
        files.push((path.clone(), report));
    }
    let passages = chunk_all(&docs, cfg.chunking())?;
    let store = PassageStore::new(passages);
    store.save_jsonl(&dir.join("passages.jsonl"))?;
    let summary = IngestSummary {
        documents: docs.len(),
        passages: store.len(),
        cross_file_duplicates: cross,
        files,
    };
    write_json(&dir.join("ingest.json"), &summary)?;
    info!(
        documents = summary.documents,
        passages = summary.passages,
        "ingest done"
    );
    run.finish(Stage::Corpus, digest, None)
}

fn cmd_index(run: &Run) -> anyhow::Result<()> {
    run.require(Stage::Corpus)?;
    let digest = run.index_digest()?;
    let dir = run.begin(Stage::Index)?;
    let store = run.store()?;
    match run.cfg.retrieval.kind {
        RetrieverKind::Bm25 => {
            let idx = Bm25Index::build(store.passages())?;
            idx.save(&dir.join("bm25.idx"))?;
            write_json(&dir.join("stats.json"), &idx.stats())?;
            info!(passages = store.len(), "bm25 index built");
        }
        RetrieverKind::Remote => {
            write_json(&dir.join("remote.json"), &run.cfg.retrieval)?;
            info!("remote retriever configured; nothing to build");
        }
    }
    run.finish(Stage::Index, digest, Some(run.corpus_digest()?))
}

fn cmd_synthesize(run: &Run, keep_rejects: bool) -> Result<(), CliError> {
    run.require(Stage::Corpus)?;
    run.require(Stage::Index)?;
    let backend = run.backend()?;
    let digest = run.synth_digest()?;
    let dir = run.begin(Stage::Synth)?;
    let store = run.store()?;
    let retriever = run.retriever(&store)?;
    let mut gen = Generator::new(backend.as_ref());
    gen.answer_cfg = run.cfg.backend.answer_config();
    gen.question_cfg = run.cfg.backend.question_config();
    let out = run_stage2(
        &store,
        &gen,
        retriever.as_ref(),
        &run.cfg.synthesis_config(),
    )
    .map_err(anyhow::Error::from)?;
    write_jsonl(&dir.join("examples.jsonl"), &out.examples)?;
    let rejects = dir.join("rejects.jsonl");
    if keep_rejects {
        write_jsonl(&rejects, &out.rejects)?;
    } else if rejects.exists() {
        fs::remove_file(&rejects).map_err(anyhow::Error::from)?;
    }
    write_json(&dir.join("report.json"), &out.report)?;
    info!(
        kept = out.report.total_kept(),
        generated = out.report.total_generated(),
        "synthesis done"
    );
    run.finish(Stage::Synth, digest, Some(run.index_digest()?))?;
    Ok(())
}

fn cmd_blend(run: &Run) -> anyhow::Result<()> {
    run.require(Stage::Synth)?;
    let digest = run.blend_digest()?;
    let dir = run.begin(Stage::Blend)?;
    let store = run.store()?;
    let examples: Vec<SyntheticExample> =
        read_jsonl(&run.dir(Stage::Synth).join("examples.jsonl"))?;
    let (entries, mut warnings) = blending::resolve_blend(run.cfg.blend_entries())?;
    let prompter = Prompter::default();
    let mut pools = Vec::with_capacity(entries.len());
    for e in &entries {
        pools.push(match e.source.task_type() {
            Some(_) => blending::synthetic_pool(&examples, e, &store, &prompter),
            None => blending::load_external(e)?,
        });
    }
    let out = blending::blend(&entries, &pools, run.cfg.blend.total, run.cfg.seed)?;
    warnings.extend(out.warnings);
    write_jsonl(&dir.join("records.jsonl"), &out.records)?;
    write_json(
        &dir.join("blend.json"),
        &BlendSummary {
            total: out.records.len(),
            entries: entries.iter().map(|e| (e.name.clone(), e.ratio)).collect(),
            counts: out.counts,
            warnings,
        },
    )?;
    info!(records = out.records.len(), "blend done");
    run.finish(Stage::Blend, digest, Some(run.synth_digest()?))
}

fn cmd_export(run: &Run) -> anyhow::Result<()> {
    run.require(Stage::Blend)?;
    let digest = run.export_digest()?;
    let dir = run.begin(Stage::Export)?;
    let records: Vec<TrainingRecord> = read_records(&run.dir(Stage::Blend).join("records.jsonl"))?;
    let bad = records.iter().filter(|r| !r.mask_ok()).count();
    if bad > 0 {
        bail!("{bad} blended records have an invalid loss mask");
    }
    let m = export_jsonl(&records, &dir.join("train.jsonl"), &digest, run.cfg.seed)?;
    info!(records = m.records, "export done");
    run.finish(Stage::Export, digest, Some(run.blend_digest()?))
}

fn cmd_evaluate(run: &Run, items_override: Option<PathBuf>) -> Result<(), CliError> {
    let items_path = items_override
        .or_else(|| run.cfg.evaluation.items.clone())
        .ok_or_else(|| config_error("no evaluation items: set evaluation.items or pass --items"))?;
    if !items_path.is_file() {
        return Err(config_error(format!(
            "evaluation items file {} not found",
            items_path.display()
        )));
    }
    run.require(Stage::Corpus)?;
    run.require(Stage::Index)?;
    let backend = run.backend()?;
    let digest = digest(&(
        "evaluate",
        run.index_digest()?,
        run.backend_fingerprint(),
        run.cfg.evaluation.use_provided_contexts,
        run.cfg.evaluation.rouge_beta,
        file_digest(&items_path).map_err(anyhow::Error::from)?,
        run.cfg.retrieval.context_budget,
        run.cfg.seed,
    ));
    let dir = run.begin(Stage::Eval)?;
    let items = load_items(&items_path).map_err(anyhow::Error::from)?;
    let store = run.store()?;
    let retriever = run.retriever(&store)?;
    let report = evaluation::evaluate(
        &items,
        retriever.as_ref(),
        &store,
        backend.as_ref(),
        &run.cfg.eval_config(),
    )
    .map_err(anyhow::Error::from)?;
    write_json(&dir.join("report.json"), &report)?;
    let table = report.summary_table();
    fs::write(dir.join("summary.txt"), &table).map_err(anyhow::Error::from)?;
    print!("{table}");
    run.finish(Stage::Eval, digest, Some(run.index_digest()?))?;
    Ok(())
}

fn synth_summary(r: &SynthesisReport) -> String {
    let mut s = format!(
        "{:<20} {:>9} {:>9} {:>13} {:>10} {:>9}\n",
        "task", "generated", "kept", "not_retrieved", "malformed", "quota"
    );
    for t in TaskType::ALL {
        let c = r.counters(t);
        s.push_str(&format!(
            "{:<20} {:>9} {:>9} {:>13} {:>10} {:>9}\n",
            t.as_str(),
            c.generated,
            c.kept,
            c.dropped_not_retrieved,
            c.dropped_malformed,
            r.quotas.get(t)
        ));
    }
    s.push_str(&format!(
        "retention {:.4}  passages visited {}\n",
        r.retention_rate, r.passages_visited
    ));
    for w in &r.warnings {
        s.push_str(&format!("warning: {w}\n"));
    }
    s
}

fn cmd_stats(run: &Run) -> anyhow::Result<()> {
    let mut any = false;
    let ingest = run.dir(Stage::Corpus).join("ingest.json");
    if ingest.exists() {
        let s: IngestSummary = read_json(&ingest)?;
        println!("corpus: {} documents, {} passages", s.documents, s.passages);
        any = true;
    }
    let stats = run.dir(Stage::Index).join("stats.json");
    if stats.exists() {
        let s: crate::retrieval::IndexStats = read_json(&stats)?;
        println!(
            "index: {} passages, avg length {:.1}, vocabulary {}",
            s.passage_count, s.avg_doc_len, s.vocabulary_size
        );
        any = true;
    }
    let report = run.dir(Stage::Synth).join("report.json");
    if report.exists() {
        let r: SynthesisReport = read_json(&report)?;
        print!("{}", synth_summary(&r));
        any = true;
    }
    let blend = run.dir(Stage::Blend).join("blend.json");
    if blend.exists() {
        let b: BlendSummary = read_json(&blend)?;
        println!("blend: {} records", b.total);
        for (name, n) in b.counts.iter().filter(|c| c.1 > 0) {
            println!("  {name:<24} {n:>8}");
        }
        for w in &b.warnings {
            println!("  warning: {w}");
        }
        any = true;
    }
    let manifest = blending::manifest_path(&run.dir(Stage::Export).join("train.jsonl"));
    if manifest.exists() {
        let m: blending::Manifest = read_json(&manifest)?;
        println!(
            "export: {} records in {} (digest {})",
            m.records,
            m.data_file,
            &m.config_digest[..12.min(m.config_digest.len())]
        );
        any = true;
    }
    let summary = run.dir(Stage::Eval).join("summary.txt");
    if summary.exists() {
        print!("{}", fs::read_to_string(summary)?);
        any = true;
    }
    if !any {
        println!(
            "no artifacts under {}; run `ingest` first",
            run.cfg.output_dir.display()
        );
    }
    Ok(())
}

/// Load and validate the configuration with command-line overrides applied.
pub fn load_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = cli.backend {
        cfg.backend.kind = b;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    if matches!(cli.command, Command::Ingest) {
        if cfg.corpus.paths.is_empty() {
            return Err(config_error("corpus.paths is empty"));
        }
        if let Some(p) = cfg.corpus.paths.iter().find(|p| !p.exists()) {
            return Err(config_error(format!(
                "corpus path {} does not exist",
                p.display()
            )));
        }
        if cfg.corpus.format == IngestFormat::PlainTextDir {
            if let Some(p) = cfg.corpus.paths.iter().find(|p| !p.is_dir()) {
                return Err(config_error(format!("{} is not a directory", p.display())));
            }
        }
    }
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let run = Run { cfg };
    match cli.command {
        Command::Ingest => cmd_ingest(&run)?,
        Command::Index => cmd_index(&run)?,
        Command::Synthesize { keep_rejects } => cmd_synthesize(&run, keep_rejects)?,
        Command::Blend => cmd_blend(&run)?,
        Command::Export => cmd_export(&run)?,
        Command::Evaluate { items } => cmd_evaluate(&run, items)?,
        Command::Stats => cmd_stats(&run)?,
    }
    Ok(())
}

/// Parse arguments, run, and map the outcome to an exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
