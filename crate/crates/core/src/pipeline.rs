//! Ingestion: chunk, detect changes, embed what changed, commit to both
//! tiers, record the new hashes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::change_detection::{classify, ChangeSet};
use crate::chunking::{chunk_document, load_document, Chunk, ChunkId, RawDocument};
use crate::clock::TimestampMs;
use crate::cold::{ColdEvent, ColdRecord};
use crate::embedding::{Embedder, Embedding};
use crate::error::{Error, Result};
use crate::failpoint::FailPoint;
use crate::hot::{HotMutation, HotRecord};
use crate::store::Store;
use crate::transactions::hot_record;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdcSummary {
    pub doc_id: String,
    pub ingest_ts: TimestampMs,
    pub total_chunks: usize,
    pub new_count: usize,
    pub modified_count: usize,
    pub deleted_count: usize,
    pub unchanged_count: usize,
    pub moved_count: usize,
    pub embeddings_computed: usize,
    pub reprocessed_fraction: f64,
    /// `None` when nothing changed and no transaction was written.
    pub txn_version: Option<u64>,
    pub elapsed_ms: u64,
}

impl CdcSummary {
    /// Chunks that differ from the previous version in any way.
    pub fn changed(&self) -> usize {
        self.new_count + self.modified_count + self.deleted_count + self.moved_count
    }
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    store: Arc<Store>,
    embedder: Arc<dyn Embedder>,
}

impl Pipeline {
    pub fn new(store: Arc<Store>, embedder: Arc<dyn Embedder>) -> Result<Self> {
        if embedder.dimension() != store.config().dimension {
            return Err(Error::DimensionMismatch {
                expected: store.config().dimension,
                got: embedder.dimension(),
            });
        }
        Ok(Self { store, embedder })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    /// Ingest one document version. `ingest_ts` defaults to the store clock.
    pub fn ingest_document(&self, doc: &RawDocument, ingest_ts: Option<TimestampMs>) -> Result<CdcSummary> {
        let clock = self.store.clock().clone();
        let started = clock.monotonic_ms();
        let ts = ingest_ts.unwrap_or_else(|| clock.now_ms());
        let doc_id = doc.doc_id();
        let chunks = chunk_document(doc);

        let writer = self.store.writer()?;
        let prior = self.store.cold().doc_active(doc_id);
        let prior_ids: Vec<ChunkId> = prior.iter().map(|r| r.chunk_id.clone()).collect();
        // The cold tier is authoritative; heal a hash-store entry left stale by
        // an interrupted ingest before diffing against it.
        let stored = self.store.hashes().get(doc_id);
        let stale = match &stored {
            Some(ids) => **ids != prior_ids,
            None => !prior_ids.is_empty(),
        };
        if stale {
            self.store.hashes().update(doc_id, prior_ids.clone())?;
        }
        let old: Vec<ChunkId> = self
            .store
            .hashes()
            .get(doc_id)
            .map(|ids| ids.as_ref().clone())
            .unwrap_or_default();
        let new_ids: Vec<ChunkId> = chunks.iter().map(|c| c.chunk_id.clone()).collect();
        let cs = classify(&old, &new_ids);

        let mut summary = CdcSummary {
            doc_id: doc_id.to_owned(),
            ingest_ts: ts,
            total_chunks: chunks.len(),
            new_count: cs.new.len(),
            modified_count: cs.modified.len(),
            deleted_count: cs.deleted.len(),
            unchanged_count: cs.unchanged.len(),
            moved_count: cs.moved.len(),
            embeddings_computed: 0,
            reprocessed_fraction: 0.0,
            txn_version: None,
            elapsed_ms: 0,
        };
        if cs.is_noop() {
            summary.elapsed_ms = clock.monotonic_ms().saturating_sub(started);
            return Ok(summary);
        }
        if let Some(previous) = self.store.cold().doc_last_ts(doc_id) {
            if ts <= previous {
                return Err(Error::TimestampRegression {
                    doc_id: doc_id.to_owned(),
                    previous,
                    given: ts,
                });
            }
        }

        let to_embed: Vec<u64> = cs
            .new
            .iter()
            .map(|(p, _)| *p)
            .chain(cs.modified.iter().map(|(p, _, _)| *p))
            .collect();
        let texts: Vec<String> = to_embed
            .iter()
            .map(|&p| chunks[p as usize].normalized.clone())
            .collect();
        let vectors = self.embedder.embed_batch(&texts)?;
        if vectors.len() != texts.len() {
            return Err(Error::Embedding {
                retryable: false,
                message: format!("embedder returned {} vectors for {} texts", vectors.len(), texts.len()),
            });
        }
        let fresh: HashMap<u64, Embedding> = to_embed.into_iter().zip(vectors).collect();
        let prior_at: BTreeMap<u64, &ColdRecord> = prior.iter().map(|r| (r.position, r)).collect();
        let (events, mutations) = plan_commit(doc_id, ts, &chunks, &cs, &fresh, &prior_at);

        let outcome = writer.commit_dual(events, &mutations, ts)?;
        self.store.failpoints().check(FailPoint::AfterCommitted)?;
        self.store.failpoints().check(FailPoint::HashStoreSave)?;
        self.store.hashes().update(doc_id, new_ids)?;
        drop(writer);

        summary.embeddings_computed = fresh.len();
        summary.reprocessed_fraction = if chunks.is_empty() {
            0.0
        } else {
            fresh.len() as f64 / chunks.len() as f64
        };
        summary.txn_version = Some(outcome.txn_version);
        summary.elapsed_ms = clock.monotonic_ms().saturating_sub(started);
        Ok(summary)
    }

    /// Ingest versions in order. A failure stops later versions of the same
    /// document; other documents carry on.
    pub fn ingest_corpus(&self, items: &[(RawDocument, TimestampMs)]) -> CorpusReport {
        let mut report = CorpusReport::default();
        let mut failed_docs: HashSet<String> = HashSet::new();
        let mut seen: HashSet<String> = HashSet::new();
        for (doc, ts) in items {
            let doc_id = doc.doc_id().to_owned();
            if failed_docs.contains(&doc_id) {
                report.failures.push(IngestFailure {
                    doc_id,
                    ts: *ts,
                    error: "skipped after an earlier failure of this document".into(),
                });
                continue;
            }
            let first = !seen.contains(&doc_id) && !self.store.hashes().contains(&doc_id);
            match self.ingest_document(doc, Some(*ts)) {
                Ok(s) => {
                    seen.insert(doc_id);
                    report.add(s, first);
                }
                Err(e) => {
                    report.failures.push(IngestFailure {
                        doc_id: doc_id.clone(),
                        ts: *ts,
                        error: e.to_string(),
                    });
                    failed_docs.insert(doc_id);
                }
            }
        }
        report.finish();
        report
    }

    /// Load a JSON-lines manifest and ingest every entry in order.
    pub fn ingest_manifest(&self, manifest: &Path) -> Result<CorpusReport> {
        let entries = read_manifest(manifest)?;
        let mut items = Vec::with_capacity(entries.len());
        let mut report_failures = Vec::new();
        for e in entries {
            match load_document(&e.path, &e.doc_id) {
                Ok(doc) => items.push((doc, e.ts)),
                Err(err) => report_failures.push(IngestFailure {
                    doc_id: e.doc_id,
                    ts: e.ts,
                    error: err.to_string(),
                }),
            }
        }
        let failed: HashSet<String> = report_failures.iter().map(|f| f.doc_id.clone()).collect();
        items.retain(|(d, _)| !failed.contains(d.doc_id()));
        let mut report = self.ingest_corpus(&items);
        report.failures.extend(report_failures);
        Ok(report)
    }
}

/// Cold events (removals first) and hot mutations for one change set.
fn plan_commit(
    doc_id: &str,
    ts: TimestampMs,
    chunks: &[Chunk],
    cs: &ChangeSet,
    fresh: &HashMap<u64, Embedding>,
    prior_at: &BTreeMap<u64, &ColdRecord>,
) -> (Vec<ColdEvent>, Vec<HotMutation>) {
    let mut removals = Vec::new();
    let mut inserts = Vec::new();
    let mut mutations = Vec::new();
    let parent = |pos: u64| -> &ColdRecord {
        prior_at
            .get(&pos)
            .copied()
            .expect("change set positions come from the cold active set")
    };
    let supersede = |pos: u64, chunk_id: &ChunkId| ColdEvent::Supersede {
        doc_id: doc_id.to_owned(),
        position: pos,
        chunk_id: chunk_id.clone(),
        valid_to: ts,
    };

    for (pos, old_id, _) in &cs.modified {
        removals.push(supersede(*pos, old_id));
    }
    for (from, _, id) in &cs.moved {
        removals.push(supersede(*from, id));
    }
    for (pos, id) in &cs.deleted {
        removals.push(ColdEvent::Delete {
            doc_id: doc_id.to_owned(),
            position: *pos,
            chunk_id: id.clone(),
            valid_to: ts,
        });
        mutations.push(HotMutation::Delete {
            doc_id: doc_id.to_owned(),
            position: *pos,
            chunk_id: id.clone(),
        });
    }

    for (pos, old_id, new_id) in &cs.modified {
        let c = &chunks[*pos as usize];
        let rec = ColdRecord::updated(parent(*pos), new_id.clone(), fresh[pos].clone(), *pos, ts, &c.content);
        mutations.push(HotMutation::Replace {
            old_chunk_id: old_id.clone(),
            record: hot_record(&rec),
        });
        inserts.push(ColdEvent::Insert(rec));
    }
    for (from, to, id) in &cs.moved {
        let p = parent(*from);
        let c = &chunks[*to as usize];
        let rec = ColdRecord::updated(p, id.clone(), p.embedding.clone(), *to, ts, &c.content);
        mutations.push(HotMutation::Move {
            from: *from,
            record: hot_record(&rec),
        });
        inserts.push(ColdEvent::Insert(rec));
    }
    for (pos, id) in &cs.new {
        let c = &chunks[*pos as usize];
        let rec = ColdRecord::inserted(id.clone(), fresh[pos].clone(), doc_id, *pos, ts, &c.content);
        mutations.push(HotMutation::Insert(HotRecord::from(&rec)));
        inserts.push(ColdEvent::Insert(rec));
    }
    removals.extend(inserts);
    (removals, mutations)
}

impl From<&ColdRecord> for HotRecord {
    fn from(r: &ColdRecord) -> Self {
        hot_record(r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestFailure {
    pub doc_id: String,
    pub ts: TimestampMs,
    pub error: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: u64,
    pub p95_ms: u64,
    pub max_ms: u64,
}

impl LatencySummary {
    pub fn from_samples(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_unstable();
        let pick = |q: f64| s[((s.len() as f64 * q).ceil() as usize).clamp(1, s.len()) - 1];
        Self {
            count: s.len(),
            mean_ms: s.iter().sum::<u64>() as f64 / s.len() as f64,
            p50_ms: pick(0.5),
            p95_ms: pick(0.95),
            max_ms: *s.last().unwrap(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusReport {
    pub versions_ingested: usize,
    pub total_chunks: usize,
    pub new_count: usize,
    pub modified_count: usize,
    pub deleted_count: usize,
    pub unchanged_count: usize,
    pub moved_count: usize,
    pub embeddings_computed: usize,
    pub transactions: usize,
    /// Mean reprocessed fraction over versions that had a predecessor.
    pub mean_fraction_non_first: Option<f64>,
    pub latency: LatencySummary,
    pub summaries: Vec<CdcSummary>,
    pub failures: Vec<IngestFailure>,
    #[serde(skip)]
    non_first: Vec<f64>,
}

impl CorpusReport {
    fn add(&mut self, s: CdcSummary, first: bool) {
        self.versions_ingested += 1;
        self.total_chunks += s.total_chunks;
        self.new_count += s.new_count;
        self.modified_count += s.modified_count;
        self.deleted_count += s.deleted_count;
        self.unchanged_count += s.unchanged_count;
        self.moved_count += s.moved_count;
        self.embeddings_computed += s.embeddings_computed;
        self.transactions += s.txn_version.is_some() as usize;
        if !first {
            self.non_first.push(s.reprocessed_fraction);
        }
        self.summaries.push(s);
    }

    fn finish(&mut self) {
        if !self.non_first.is_empty() {
            self.mean_fraction_non_first = Some(self.non_first.iter().sum::<f64>() / self.non_first.len() as f64);
        }
        let lat: Vec<u64> = self.summaries.iter().map(|s| s.elapsed_ms).collect();
        self.latency = LatencySummary::from_samples(&lat);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    pub path: PathBuf,
    pub ts: TimestampMs,
}

/// Parse a manifest of `{"doc_id", "path", "ts"}` lines. Relative paths
/// resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let mut e: ManifestEntry = serde_json::from_str(line)
                .map_err(|err| Error::InvalidInput(format!("{} line {}: {err}", path.display(), i + 1)))?;
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            Ok(e)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    FullReindex,
    DocLevelUpsert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BaselineCounters {
    pub mode: BaselineMode,
    pub versions: usize,
    /// Versions whose raw text differs from the document's previous version.
    pub touched_versions: usize,
    /// Embeddings the baseline would compute.
    pub embeddings: usize,
    /// Embeddings chunk-level change detection computes on the same corpus.
    pub cdc_embeddings: usize,
}

/// Embedding work a baseline system would do over `items`, processed in order.
pub fn baseline_counters(items: &[(RawDocument, TimestampMs)], mode: BaselineMode) -> BaselineCounters {
    let mut last: HashMap<&str, (&str, Vec<ChunkId>)> = HashMap::new();
    let mut out = BaselineCounters {
        mode,
        versions: 0,
        touched_versions: 0,
        embeddings: 0,
        cdc_embeddings: 0,
    };
    for (doc, _) in items {
        let ids: Vec<ChunkId> = chunk_document(doc).into_iter().map(|c| c.chunk_id).collect();
        let prev = last.get(doc.doc_id());
        let touched = prev.is_none_or(|(text, _)| *text != doc.text());
        let old: &[ChunkId] = prev.map(|(_, ids)| ids.as_slice()).unwrap_or(&[]);
        out.versions += 1;
        out.touched_versions += touched as usize;
        out.cdc_embeddings += classify(old, &ids).embedding_workload();
        out.embeddings += match mode {
            BaselineMode::FullReindex => ids.len(),
            BaselineMode::DocLevelUpsert if touched => ids.len(),
            BaselineMode::DocLevelUpsert => 0,
        };
        last.insert(doc.doc_id(), (doc.text(), ids));
    }
    out
}
