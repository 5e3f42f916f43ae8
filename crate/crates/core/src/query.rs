//! Temporal query routing over the two tiers.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chunking::{normalize, ChunkId};
use crate::clock::TimestampMs;
use crate::cold::ColdRecord;
use crate::embedding::{dot, Embedder, Embedding};
use crate::error::{Error, Result};
use crate::hot::HotRecord;
use crate::store::Store;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Temporal {
    Current,
    AsOf { ts: TimestampMs },
    Range { start: TimestampMs, end: TimestampMs },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Hot,
    Cold,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub text: String,
    pub k: usize,
    pub temporal: Temporal,
}

impl QuerySpec {
    pub fn new(text: impl Into<String>, k: usize, temporal: Temporal) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        if let Temporal::Range { start, end } = temporal {
            if start >= end {
                return Err(Error::InvalidInput(format!("range start {start} must precede end {end}")));
            }
        }
        Ok(Self {
            text: text.into(),
            k,
            temporal,
        })
    }

    pub fn current(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            k: DEFAULT_K,
            temporal: Temporal::Current,
        }
    }
}

pub fn classify(spec: &QuerySpec) -> Route {
    match spec.temporal {
        Temporal::Current => Route::Hot,
        Temporal::AsOf { .. } => Route::Cold,
        Temporal::Range { .. } => Route::Both,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Hot,
    Cold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub chunk_id: ChunkId,
    pub doc_id: String,
    pub position: u64,
    pub content: String,
    pub similarity: f32,
    pub valid_from: TimestampMs,
    pub valid_to: Option<TimestampMs>,
    /// Lineage version; only cold hits carry it.
    pub version_number: Option<u64>,
    pub tier: Tier,
}

impl Hit {
    fn from_hot(r: HotRecord, similarity: f32) -> Self {
        Self {
            chunk_id: r.chunk_id,
            doc_id: r.doc_id,
            position: r.position,
            content: r.content,
            similarity,
            valid_from: r.valid_from,
            valid_to: None,
            version_number: None,
            tier: Tier::Hot,
        }
    }

    fn from_cold(r: &ColdRecord, similarity: f32) -> Self {
        Self {
            chunk_id: r.chunk_id.clone(),
            doc_id: r.doc_id.clone(),
            position: r.position,
            content: r.content.clone(),
            similarity,
            valid_from: r.valid_from,
            valid_to: r.valid_to,
            version_number: Some(r.version_number),
            tier: Tier::Cold,
        }
    }
}

/// Best first; equal similarities by ascending chunk_id, then location.
pub fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.chunk_id.cmp(&b.chunk_id))
        .then_with(|| (&a.doc_id, a.position).cmp(&(&b.doc_id, b.position)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub route: Route,
    pub hits: Vec<Hit>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeDiff {
    pub only_start: Vec<ChunkId>,
    pub only_end: Vec<ChunkId>,
    pub both: Vec<ChunkId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeResult {
    pub start: TimestampMs,
    pub end: TimestampMs,
    pub at_start: Vec<Hit>,
    pub at_end: Vec<Hit>,
    pub end_tier: Tier,
    pub diff: RangeDiff,
}

#[derive(Debug, Clone)]
pub struct QueryEngine {
    store: Arc<Store>,
    embedder: Arc<dyn Embedder>,
}

impl QueryEngine {
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

    fn embed(&self, text: &str) -> Result<Embedding> {
        self.embedder.embed(&normalize(text))
    }

    pub fn run(&self, spec: &QuerySpec) -> Result<QueryOutput> {
        Ok(match spec.temporal {
            Temporal::Current => QueryOutput::Ranked(self.query_current(&spec.text, spec.k)?),
            Temporal::AsOf { ts } => QueryOutput::Ranked(self.query_as_of(&spec.text, ts, spec.k)?),
            Temporal::Range { start, end } => QueryOutput::Range(self.query_range(&spec.text, start, end, spec.k)?),
        })
    }

    /// Approximate search over the active set.
    pub fn query_current(&self, text: &str, k: usize) -> Result<QueryResult> {
        check_k(k)?;
        let q = self.embed(text)?;
        Ok(QueryResult {
            route: Route::Hot,
            hits: self.hot_hits(&q, k)?,
        })
    }

    fn hot_hits(&self, q: &Embedding, k: usize) -> Result<Vec<Hit>> {
        let hits = self.store.hot().search(q.as_slice(), k)?;
        Ok(hits.into_iter().map(|(r, s)| Hit::from_hot(r, s)).collect())
    }

    /// Exact search over the records valid at `ts`. Nothing outside that
    /// snapshot is ever scored.
    pub fn query_as_of(&self, text: &str, ts: TimestampMs, k: usize) -> Result<QueryResult> {
        check_k(k)?;
        let q = self.embed(text)?;
        Ok(QueryResult {
            route: Route::Cold,
            hits: self.cold_hits(&q, ts, k),
        })
    }

    fn cold_hits(&self, q: &Embedding, ts: TimestampMs, k: usize) -> Vec<Hit> {
        let mut scored: Vec<Hit> = Vec::new();
        self.store.cold().for_each_as_of(ts, |r| {
            let sim = dot(q.as_slice(), r.embedding.as_slice());
            // Bounded buffer: sort and cut whenever it doubles past k.
            scored.push(Hit::from_cold(r, sim));
            if scored.len() >= 2 * k.max(32) {
                scored.sort_by(rank_order);
                scored.truncate(k);
            }
        });
        scored.sort_by(rank_order);
        scored.truncate(k);
        scored
    }

    /// Results at both ends of `[start, end]` and how they differ. The end
    /// is served from the hot tier once no later commit exists.
    pub fn query_range(&self, text: &str, start: TimestampMs, end: TimestampMs, k: usize) -> Result<RangeResult> {
        check_k(k)?;
        if start >= end {
            return Err(Error::InvalidInput(format!("range start {start} must precede end {end}")));
        }
        let q = self.embed(text)?;
        let at_start = self.cold_hits(&q, start, k);
        let latest = self.store.cold().last_visible_commit_ts();
        let (at_end, end_tier) = if latest.is_none_or(|l| end >= l) {
            (self.hot_hits(&q, k)?, Tier::Hot)
        } else {
            (self.cold_hits(&q, end, k), Tier::Cold)
        };
        let diff = diff_ids(&at_start, &at_end);
        Ok(RangeResult {
            start,
            end,
            at_start,
            at_end,
            end_tier,
            diff,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum QueryOutput {
    Ranked(QueryResult),
    Range(RangeResult),
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    Ok(())
}

pub fn diff_ids(start: &[Hit], end: &[Hit]) -> RangeDiff {
    let a: BTreeSet<&ChunkId> = start.iter().map(|h| &h.chunk_id).collect();
    let b: BTreeSet<&ChunkId> = end.iter().map(|h| &h.chunk_id).collect();
    RangeDiff {
        only_start: a.difference(&b).map(|c| (*c).clone()).collect(),
        only_end: b.difference(&a).map(|c| (*c).clone()).collect(),
        both: a.intersection(&b).map(|c| (*c).clone()).collect(),
    }
}
