use std::fs::{self, File, TryLockError};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use chrono::DateTime;
use clap::{Args, Parser, Subcommand, ValueEnum};

use tempovec::change_detection::classify;
use tempovec::chunking::load_document;
use tempovec::clock::{SystemClock, TimestampMs};
use tempovec::corpus::{Corpus, CorpusConfig};
use tempovec::embedding::{Embedder, EmbedderConfig, Provider, DEFAULT_DIMENSION};
use tempovec::failpoint::Failpoints;
use tempovec::pipeline::Pipeline;
use tempovec::query::{QueryEngine, DEFAULT_K};
use tempovec::store::{stored_dimension, Store, StoreConfig};
use tempovec::transactions::spawn_reconciler;

mod render;

use render::Out;

const DATA_DIR_ENV: &str = "TEMPOVEC_DATA_DIR";
const FAILPOINTS_ENV: &str = "TEMPOVEC_FAILPOINTS";
const LOCK_FILE: &str = "LOCK";

#[derive(Parser, Debug)]
#[command(name = "tempovec", version, about = "Temporal vector knowledge base")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Data directory. TEMPOVEC_DATA_DIR takes precedence when set.
    #[arg(long, global = true, default_value = "tempovec-data")]
    data_dir: PathBuf,
    /// Embedding dimension. Defaults to the stored one, else 384.
    #[arg(long, global = true)]
    dimension: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = ProviderArg::Deterministic)]
    embed_provider: ProviderArg,
    #[arg(long, global = true)]
    embed_endpoint: Option<String>,
    #[arg(long, global = true, default_value_t = 64)]
    ef_search: usize,
    /// Background reconcile period during long ingests; 0 disables it.
    #[arg(long, global = true, default_value_t = 0)]
    reconcile_interval_ms: u64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    format: Format,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProviderArg {
    Deterministic,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest one document version.
    Ingest {
        path: PathBuf,
        #[arg(long)]
        doc_id: String,
        /// Milliseconds since the epoch or RFC3339. Defaults to now.
        #[arg(long, value_parser = parse_ts)]
        ts: Option<TimestampMs>,
    },
    /// Search current knowledge.
    Query {
        text: String,
        #[arg(short, default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Search knowledge as it stood at a point in time.
    QueryAsof {
        text: String,
        #[arg(long, value_parser = parse_ts)]
        ts: TimestampMs,
        #[arg(short, default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Compare results at both ends of a time range.
    QueryRange {
        text: String,
        #[arg(long, value_parser = parse_ts)]
        from: TimestampMs,
        #[arg(long, value_parser = parse_ts)]
        to: TimestampMs,
        #[arg(short, default_value_t = DEFAULT_K)]
        k: usize,
    },
    /// Version history of a document.
    Timeline {
        #[arg(long)]
        doc_id: String,
    },
    /// Paragraph-level changes between two stored versions of a document.
    Diff {
        #[arg(long)]
        doc_id: String,
        #[arg(long)]
        v1: u64,
        #[arg(long)]
        v2: u64,
    },
    /// Storage statistics for both tiers.
    Stats,
    /// Settle interrupted transactions.
    Reconcile,
    /// Compare the hot index with the cold active set. Exits 3 on divergence.
    Verify,
    /// Rebuild the hot index without tombstones.
    Compact,
    /// Write a synthetic evolving corpus with its change ledger.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        docs: usize,
        #[arg(long, default_value_t = 5)]
        versions: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Ingest every entry of a JSON-lines manifest in order.
    IngestCorpus { manifest: PathBuf },
}

impl Command {
    fn writes(&self) -> bool {
        matches!(
            self,
            Command::Ingest { .. } | Command::Reconcile | Command::Compact | Command::IngestCorpus { .. }
        )
    }
}

fn parse_ts(s: &str) -> Result<TimestampMs, String> {
    if let Ok(ms) = s.parse::<TimestampMs>() {
        return Ok(ms);
    }
    DateTime::parse_from_rfc3339(s)
        .map(|d| d.timestamp_millis())
        .map_err(|e| format!("expected milliseconds or an RFC3339 timestamp: {e}"))
}

/// Failure with its exit code.
#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Store(#[from] tempovec::Error),
    #[error("{0}")]
    Other(String),
    #[error("{0} divergent record(s) between tiers")]
    Divergence(usize),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Store(tempovec::Error::InvalidInput(_) | tempovec::Error::VersionOutOfRange { .. }) => 1,
            CliError::Store(_) | CliError::Other(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

struct Session {
    store: Arc<Store>,
    embedder: Arc<dyn Embedder>,
    // Held for the life of the process; the OS releases it on exit.
    _lock: Option<File>,
}

fn data_dir(global: &Global) -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| global.data_dir.clone())
}

fn open(global: &Global, write: bool) -> CliResult<Session> {
    let dir = data_dir(global);
    fs::create_dir_all(&dir).map_err(|e| tempovec::Error::io(&dir, e))?;
    let lock_path = dir.join(LOCK_FILE);
    let file = File::options()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&lock_path)
        .map_err(|e| tempovec::Error::io(&lock_path, e))?;
    let lock = match file.try_lock() {
        Ok(()) => Some(file),
        Err(TryLockError::WouldBlock) if write => {
            return Err(CliError::Other(format!(
                "{} is locked by another writer; retry when it finishes",
                dir.display()
            )))
        }
        Err(TryLockError::WouldBlock) => None,
        Err(TryLockError::Error(e)) => return Err(tempovec::Error::io(&lock_path, e).into()),
    };
    let dimension = match (global.dimension, stored_dimension(&dir)?) {
        (Some(d), _) => d,
        (None, Some(d)) => d,
        (None, None) => DEFAULT_DIMENSION,
    };
    let mut config = StoreConfig::new(&dir, dimension);
    config.read_only = lock.is_none();
    config.hnsw.ef_search = global.ef_search;
    let failpoints = match std::env::var(FAILPOINTS_ENV) {
        Ok(spec) => Failpoints::from_spec(&spec)?,
        Err(_) => Failpoints::new(),
    };
    let store = Store::open(config, Arc::new(SystemClock::new()), Arc::new(failpoints))?;
    let embedder = EmbedderConfig {
        dimension,
        provider: match global.embed_provider {
            ProviderArg::Deterministic => Provider::Deterministic,
            ProviderArg::Remote => Provider::Remote,
        },
        remote_endpoint: global.embed_endpoint.clone(),
        ..Default::default()
    }
    .build()?;
    Ok(Session {
        store: Arc::new(store),
        embedder,
        _lock: lock,
    })
}

fn run(cli: Cli) -> CliResult {
    let g = &cli.global;
    let out = Out::new(g.format);
    if let Command::GenCorpus {
        out: dir,
        docs,
        versions,
        seed,
    } = &cli.command
    {
        let mut config = CorpusConfig {
            docs: *docs,
            versions: *versions,
            ..Default::default()
        };
        if let Some(s) = seed {
            config.seed = *s;
        }
        let corpus = Corpus::generate(config)?;
        corpus.write_to(dir)?;
        out.corpus_written(dir, &corpus);
        return Ok(());
    }

    let s = open(g, cli.command.writes())?;
    let engine = || QueryEngine::new(s.store.clone(), s.embedder.clone());
    match &cli.command {
        Command::Ingest { path, doc_id, ts } => {
            let doc = load_document(path, doc_id)?;
            let summary = Pipeline::new(s.store.clone(), s.embedder.clone())?.ingest_document(&doc, *ts)?;
            out.summary(&summary);
        }
        Command::Query { text, k } => out.ranked(&engine()?.query_current(text, *k)?.hits),
        Command::QueryAsof { text, ts, k } => out.ranked(&engine()?.query_as_of(text, *ts, *k)?.hits),
        Command::QueryRange { text, from, to, k } => {
            if from >= to {
                return Err(CliError::Usage(format!("--from {from} must be earlier than --to {to}")));
            }
            out.range(&engine()?.query_range(text, *from, *to, *k)?);
        }
        Command::Timeline { doc_id } => {
            let t = s.store.cold().document_timeline(doc_id);
            if t.is_empty() {
                return Err(CliError::Other(format!("unknown document {doc_id:?}")));
            }
            out.timeline(doc_id, &t);
        }
        Command::Diff { doc_id, v1, v2 } => {
            let cold = s.store.cold();
            if cold.document_timeline(doc_id).is_empty() {
                return Err(CliError::Other(format!("unknown document {doc_id:?}")));
            }
            let ids = |v| -> CliResult<Vec<_>> {
                Ok(cold
                    .document_at_version(doc_id, v)?
                    .into_iter()
                    .map(|r| r.chunk_id)
                    .collect())
            };
            out.diff(&classify(&ids(*v1)?, &ids(*v2)?));
        }
        Command::Stats => out.stats(&s.store.hot().stats(), &s.store.cold().stats()),
        Command::Reconcile => {
            let report = s.store.reconcile()?;
            let mut combined = s.store.open_report().cloned().unwrap_or_default();
            combined.repaired += report.repaired;
            combined.compensated += report.compensated;
            combined.skipped += report.skipped;
            combined.hash_store_resynced = combined.hash_store_resynced.max(report.hash_store_resynced);
            combined.errors.extend(report.errors);
            out.reconcile(&combined);
            if !combined.errors.is_empty() {
                return Err(CliError::Other(format!("{} reconcile error(s)", combined.errors.len())));
            }
        }
        Command::Verify => {
            let d = s.store.verify_tiers();
            out.verify(&d);
            if !d.is_empty() {
                return Err(CliError::Divergence(d.len()));
            }
        }
        Command::Compact => {
            let before = s.store.hot().stats();
            s.store.force_compact()?;
            out.compacted(&before, &s.store.hot().stats());
        }
        Command::IngestCorpus { manifest } => {
            let pipeline = Pipeline::new(s.store.clone(), s.embedder.clone())?;
            let _bg = (g.reconcile_interval_ms > 0)
                .then(|| spawn_reconciler(s.store.clone(), Duration::from_millis(g.reconcile_interval_ms)));
            let report = pipeline.ingest_manifest(manifest)?;
            out.corpus_report(&report);
            if !report.failures.is_empty() {
                return Err(CliError::Other(format!("{} version(s) failed", report.failures.len())));
            }
        }
        Command::GenCorpus { .. } => unreachable!("handled before opening the store"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
