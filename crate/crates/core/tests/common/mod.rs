#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tempovec::chunking::{chunk_document, hash_chunk, ChunkId, RawDocument};
use tempovec::clock::{ManualClock, TimestampMs};
use tempovec::cold::{ColdEvent, ColdRecord, ColdTier, SnapshotView};
use tempovec::embedding::{Embedder, Embedding, HashingEmbedder};
use tempovec::failpoint::Failpoints;
use tempovec::pipeline::Pipeline;
use tempovec::query::QueryEngine;
use tempovec::store::{Store, StoreConfig};

pub fn open_store(dir: &Path, dim: usize, failpoints: Arc<Failpoints>) -> Arc<Store> {
    Arc::new(Store::open(StoreConfig::new(dir, dim), Arc::new(ManualClock::new(0)), failpoints).unwrap())
}

pub fn embedder(dim: usize) -> Arc<dyn Embedder> {
    Arc::new(HashingEmbedder::new(dim).unwrap())
}

pub fn pipeline(store: &Arc<Store>) -> Pipeline {
    Pipeline::new(store.clone(), embedder(store.config().dimension)).unwrap()
}

pub fn engine(store: &Arc<Store>) -> QueryEngine {
    QueryEngine::new(store.clone(), embedder(store.config().dimension)).unwrap()
}

pub fn chunk_ids(doc: &RawDocument) -> Vec<ChunkId> {
    chunk_document(doc).into_iter().map(|c| c.chunk_id).collect()
}

/// Comparable projection of a record: everything but the embedding and
/// the end of its interval.
pub type Row = (String, u64, ChunkId, TimestampMs, String, u64);

pub fn row(r: &ColdRecord) -> Row {
    (
        r.doc_id.clone(),
        r.position,
        r.chunk_id.clone(),
        r.valid_from,
        r.content.clone(),
        r.version_number,
    )
}

pub fn rows(v: &SnapshotView) -> Vec<(Row, Option<TimestampMs>)> {
    v.records.iter().map(|r| (row(r), r.valid_to)).collect()
}

/// One appended transaction as the oracle sees it.
#[derive(Debug, Clone)]
pub struct ScriptTxn {
    pub events: Vec<ColdEvent>,
    pub ts: TimestampMs,
    /// Appended hidden, then compensated.
    pub compensated: bool,
}

/// Brute-force history: replays every visible transaction from scratch
/// with linear scans and no indexes.
#[derive(Debug, Default)]
pub struct ReplayOracle {
    /// (record, version that created it, version that ended it, end ts)
    history: Vec<(ColdRecord, u64, Option<u64>, Option<TimestampMs>)>,
}

impl ReplayOracle {
    /// Versions are 1-based; a compensated transaction still consumes its
    /// version and so does its compensation marker.
    pub fn replay(script: &[ScriptTxn]) -> Self {
        let mut o = Self::default();
        let mut version = 0u64;
        for t in script {
            version += 1;
            if t.compensated {
                version += 1;
                continue;
            }
            for e in &t.events {
                match e {
                    ColdEvent::Supersede {
                        doc_id,
                        position,
                        valid_to,
                        ..
                    }
                    | ColdEvent::Delete {
                        doc_id,
                        position,
                        valid_to,
                        ..
                    } => {
                        let open = o
                            .history
                            .iter_mut()
                            .find(|(r, _, end, _)| end.is_none() && r.doc_id == *doc_id && r.position == *position)
                            .expect("script removes an open record");
                        open.2 = Some(version);
                        open.3 = Some(*valid_to);
                    }
                    ColdEvent::Insert(r) => o.history.push((r.clone(), version, None, None)),
                }
            }
        }
        o
    }

    pub fn as_of(&self, ts: TimestampMs) -> Vec<(Row, Option<TimestampMs>)> {
        let mut out: Vec<_> = self
            .history
            .iter()
            .filter(|(r, _, _, end)| r.valid_from <= ts && end.is_none_or(|e| ts < e))
            .map(|(r, _, _, end)| (row(r), *end))
            .collect();
        out.sort_by(|a, b| (&a.0 .0, a.0 .1).cmp(&(&b.0 .0, b.0 .1)));
        out
    }

    pub fn at_version(&self, v: u64) -> Vec<Row> {
        let mut out: Vec<Row> = self
            .history
            .iter()
            .filter(|(_, c, e, _)| *c <= v && e.is_none_or(|e| e > v))
            .map(|(r, ..)| row(r))
            .collect();
        out.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        out
    }
}

pub const EVENT_DIM: usize = 4;

fn text_id(n: u64) -> (String, ChunkId) {
    let text = format!("chunk text {n}");
    let id = hash_chunk(&text);
    (text, id)
}

/// Random valid transaction script with at most `max_events` events.
pub fn random_script(rng: &mut ChaCha8Rng, max_events: usize) -> Vec<ScriptTxn> {
    // (doc, pos) -> current record
    let mut live: BTreeMap<(String, u64), ColdRecord> = BTreeMap::new();
    let mut script = Vec::new();
    let mut events_used = 0;
    let mut ts: TimestampMs = rng.random_range(0..100);
    let mut counter = 0u64;
    let docs = ["a", "b", "c"];
    while events_used < max_events {
        ts += rng.random_range(1..=3);
        let doc = docs[rng.random_range(0..docs.len())];
        let mut removals = Vec::new();
        let mut inserts = Vec::new();
        let mut touched: HashSet<u64> = HashSet::new();
        let mut freed: Vec<(u64, ColdRecord)> = Vec::new();
        let ops = rng.random_range(1..=4);
        for _ in 0..ops {
            let occupied: Vec<u64> = live
                .keys()
                .filter(|(d, p)| d == doc && !touched.contains(p))
                .map(|(_, p)| *p)
                .collect();
            match rng.random_range(0..4) {
                // Update in place or move to a free slot.
                0 | 1 if !occupied.is_empty() => {
                    let p = occupied[rng.random_range(0..occupied.len())];
                    touched.insert(p);
                    let parent = live.remove(&(doc.to_owned(), p)).unwrap();
                    removals.push(ColdEvent::Supersede {
                        doc_id: doc.into(),
                        position: p,
                        chunk_id: parent.chunk_id.clone(),
                        valid_to: ts,
                    });
                    freed.push((p, parent));
                }
                2 if !occupied.is_empty() => {
                    let p = occupied[rng.random_range(0..occupied.len())];
                    touched.insert(p);
                    let gone = live.remove(&(doc.to_owned(), p)).unwrap();
                    removals.push(ColdEvent::Delete {
                        doc_id: doc.into(),
                        position: p,
                        chunk_id: gone.chunk_id,
                        valid_to: ts,
                    });
                }
                _ => {
                    let p = rng.random_range(0..8u64);
                    if live.contains_key(&(doc.to_owned(), p)) || touched.contains(&p) {
                        continue;
                    }
                    touched.insert(p);
                    counter += 1;
                    let (text, id) = text_id(counter);
                    let r = ColdRecord::inserted(id, Embedding::basis(EVENT_DIM), doc, p, ts, text);
                    live.insert((doc.to_owned(), p), r.clone());
                    inserts.push(ColdEvent::Insert(r));
                }
            }
        }
        // Each superseded parent gets a successor, at its own slot or a free one.
        for (p, parent) in freed {
            let target = if rng.random_bool(0.7) {
                p
            } else {
                match (0..8u64).find(|q| !live.contains_key(&(doc.to_owned(), *q)) && !touched.contains(q)) {
                    Some(q) => {
                        touched.insert(q);
                        q
                    }
                    None => p,
                }
            };
            let (text, id) = if target != p && rng.random_bool(0.5) {
                (parent.content.clone(), parent.chunk_id.clone())
            } else {
                counter += 1;
                text_id(counter)
            };
            let r = ColdRecord::updated(&parent, id, Embedding::basis(EVENT_DIM), target, ts, text);
            live.insert((doc.to_owned(), target), r.clone());
            inserts.push(ColdEvent::Insert(r));
        }
        let mut events = removals;
        events.extend(inserts);
        if events.is_empty() {
            continue;
        }
        if events_used + events.len() > max_events {
            break;
        }
        events_used += events.len();
        let compensated = rng.random_bool(0.1);
        if compensated {
            // Undo the model changes: rebuild from the visible script.
            script.push(ScriptTxn { events, ts, compensated });
            live = rebuild_live(&script);
        } else {
            script.push(ScriptTxn { events, ts, compensated });
        }
    }
    script
}

fn rebuild_live(script: &[ScriptTxn]) -> BTreeMap<(String, u64), ColdRecord> {
    let mut live = BTreeMap::new();
    for t in script.iter().filter(|t| !t.compensated) {
        for e in &t.events {
            match e {
                ColdEvent::Supersede { doc_id, position, .. } | ColdEvent::Delete { doc_id, position, .. } => {
                    live.remove(&(doc_id.clone(), *position));
                }
                ColdEvent::Insert(r) => {
                    live.insert((r.doc_id.clone(), r.position), r.clone());
                }
            }
        }
    }
    live
}

/// Append a script to a cold tier, exercising hide/reveal and compensation.
pub fn apply_script(cold: &ColdTier, script: &[ScriptTxn]) {
    for (i, t) in script.iter().enumerate() {
        let wal = Some(i as u64 + 1);
        if t.compensated {
            let v = cold.append(t.events.clone(), t.ts, wal, true).unwrap();
            cold.compensate(v, wal).unwrap();
        } else if i % 3 == 0 {
            let v = cold.append(t.events.clone(), t.ts, wal, true).unwrap();
            cold.reveal(v).unwrap();
        } else {
            cold.append(t.events.clone(), t.ts, wal, false).unwrap();
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Paragraph documents for store-level tests: `paras[i]` is position i.
pub fn doc(doc_id: &str, paras: &[String]) -> RawDocument {
    RawDocument::new(doc_id, paras.join("\n\n")).unwrap()
}

/// Random lowercase word soup, distinct per call with overwhelming odds.
pub fn random_paragraph(rng: &mut ChaCha8Rng, words: usize) -> String {
    const SYL: [&str; 12] = ["ka", "lo", "mi", "ren", "tu", "vash", "el", "dor", "qui", "zan", "po", "si"];
    (0..words)
        .map(|_| {
            let n = rng.random_range(2..=3);
            (0..n).map(|_| SYL[rng.random_range(0..SYL.len())]).collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Current chunk ids per document, from the cold tier.
pub fn cold_doc_ids(store: &Store) -> HashMap<String, Vec<ChunkId>> {
    store
        .cold()
        .doc_ids()
        .into_iter()
        .map(|d| {
            let ids = store.cold().doc_active(&d).into_iter().map(|r| r.chunk_id).collect();
            (d, ids)
        })
        .collect()
}
