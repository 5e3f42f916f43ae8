//! Hot tier: the currently-active chunk records behind an HNSW index.
//!
//! Writes go to the record file first and then into memory, under a single
//! writer mutex. Searches take a read lock on the in-memory state, so a
//! search sees every mutation of a batch or none of them.

pub mod hnsw;
pub mod records;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::Serialize;

use crate::chunking::ChunkId;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::failpoint::{FailPoint, Failpoints};

pub use hnsw::{HnswIndex, HnswParams, Slot};
pub use records::HotRecord;
use records::{HotFiles, Loaded};

/// Tombstone fraction above which `compact` rebuilds.
pub const COMPACTION_THRESHOLD: f64 = 0.2;

type Key = (String, u64);

#[derive(Debug, Clone)]
pub enum HotMutation {
    Insert(HotRecord),
    /// Swap the live record at the new record's key.
    Replace {
        old_chunk_id: ChunkId,
        record: HotRecord,
    },
    Delete {
        doc_id: String,
        position: u64,
        chunk_id: ChunkId,
    },
    /// Drop the record at `from`; `record` carries the destination position.
    Move {
        from: u64,
        record: HotRecord,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HotStats {
    pub active_count: usize,
    pub tombstone_count: usize,
    pub dimension: usize,
    pub params: HnswParams,
    pub bytes_on_disk: u64,
}

#[derive(Debug)]
struct HotState {
    index: HnswIndex,
    records: Vec<HotRecord>,
    live: HashMap<Key, Slot>,
}

impl HotState {
    fn empty(dim: usize, params: HnswParams) -> Self {
        Self {
            index: HnswIndex::new(dim, params),
            records: Vec::new(),
            live: HashMap::new(),
        }
    }

    /// Rebuild from the record file. Also returns slots that shadow a later
    /// record with the same key; they were left live by an interrupted batch.
    fn replay(loaded: Loaded, dim: usize, params: HnswParams) -> Result<(Self, Vec<u64>)> {
        let mut st = Self::empty(dim, params);
        let dead: HashSet<u64> = loaded.tombstones.into_iter().collect();
        let mut shadowed = Vec::new();
        for (slot, r) in loaded.records.into_iter().enumerate() {
            if r.embedding.dimension() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.embedding.dimension(),
                });
            }
            let s = st.index.insert(r.embedding.as_slice());
            debug_assert_eq!(s as usize, slot);
            if dead.contains(&(slot as u64)) {
                st.index.tombstone(s);
            } else if let Some(prev) = st.live.insert((r.doc_id.clone(), r.position), s) {
                st.index.tombstone(prev);
                shadowed.push(prev as u64);
            }
            st.records.push(r);
        }
        Ok((st, shadowed))
    }

    fn live_slot(&self, doc_id: &str, position: u64) -> Option<Slot> {
        self.live.get(&(doc_id.to_owned(), position)).copied()
    }
}

#[derive(Debug)]
pub struct HotTier {
    dir: PathBuf,
    dim: usize,
    failpoints: Arc<Failpoints>,
    state: RwLock<HotState>,
    files: Mutex<Option<HotFiles>>,
    /// Set when disk and memory may disagree after a failed write.
    poisoned: AtomicBool,
}

impl HotTier {
    pub fn open(
        dir: impl Into<PathBuf>,
        dim: usize,
        params: HnswParams,
        failpoints: Arc<Failpoints>,
        writable: bool,
    ) -> Result<Self> {
        let dir = dir.into();
        let (files, loaded) = if writable {
            let (f, l) = HotFiles::open(&dir)?;
            (Some(f), l)
        } else {
            (None, records::load(&dir)?)
        };
        let (state, shadowed) = HotState::replay(loaded, dim, params)?;
        let mut files = files;
        if let Some(f) = files.as_mut() {
            f.append_tombstones(&shadowed)?;
        }
        Ok(Self {
            dir,
            dim,
            failpoints,
            state: RwLock::new(state),
            files: Mutex::new(files),
            poisoned: AtomicBool::new(false),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn is_writable(&self) -> bool {
        self.files.lock().is_some()
    }

    pub fn set_ef_search(&self, ef: usize) {
        self.state.write().index.set_ef_search(ef);
    }

    pub fn insert(&self, record: HotRecord) -> Result<()> {
        self.apply_batch(&[HotMutation::Insert(record)])
    }

    pub fn replace(&self, old_chunk_id: ChunkId, record: HotRecord) -> Result<()> {
        self.apply_batch(&[HotMutation::Replace {
            old_chunk_id,
            record,
        }])
    }

    pub fn delete(&self, chunk_id: ChunkId, doc_id: &str, position: u64) -> Result<()> {
        self.apply_batch(&[HotMutation::Delete {
            doc_id: doc_id.to_owned(),
            position,
            chunk_id,
        }])
    }

    /// Validate the whole batch against the live set, then apply it atomically.
    /// Removals are checked before inserts, so a batch may free a key and
    /// reuse it.
    pub fn apply_batch(&self, mutations: &[HotMutation]) -> Result<()> {
        let mut guard = self.files.lock();
        let files = guard.as_mut().ok_or(Error::ReadOnly)?;
        self.repair_if_poisoned(files)?;
        self.failpoints.check(FailPoint::HotApply)?;
        let (removals, inserts) = self.plan(mutations)?;
        self.write(files, removals, inserts)
    }

    fn plan(&self, mutations: &[HotMutation]) -> Result<(Vec<Slot>, Vec<HotRecord>)> {
        let st = self.state.read();
        let mut removals = Vec::new();
        let mut freed: HashSet<Key> = HashSet::new();
        let mut inserts = Vec::new();
        let mut remove = |doc_id: &str, position: u64, chunk_id: &ChunkId| -> Result<()> {
            let key = (doc_id.to_owned(), position);
            match st.live.get(&key) {
                Some(&s) if st.records[s as usize].chunk_id == *chunk_id && !freed.contains(&key) => {
                    removals.push(s);
                    freed.insert(key);
                    Ok(())
                }
                _ => Err(Error::Divergence {
                    doc_id: doc_id.to_owned(),
                    position,
                    chunk_id: chunk_id.to_string(),
                }),
            }
        };
        for m in mutations {
            match m {
                HotMutation::Insert(r) => inserts.push(r),
                HotMutation::Replace {
                    old_chunk_id,
                    record,
                } => {
                    remove(&record.doc_id, record.position, old_chunk_id)?;
                    inserts.push(record);
                }
                HotMutation::Delete {
                    doc_id,
                    position,
                    chunk_id,
                } => remove(doc_id, *position, chunk_id)?,
                HotMutation::Move { from, record } => {
                    remove(&record.doc_id, *from, &record.chunk_id)?;
                    inserts.push(record);
                }
            }
        }
        let mut taken: HashSet<Key> = HashSet::new();
        for r in &inserts {
            if r.embedding.dimension() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: r.embedding.dimension(),
                });
            }
            let key = (r.doc_id.clone(), r.position);
            let occupied = st.live.contains_key(&key) && !freed.contains(&key);
            if occupied || !taken.insert(key) {
                return Err(Error::Conflict {
                    doc_id: r.doc_id.clone(),
                    position: r.position,
                });
            }
        }
        Ok((removals, inserts.into_iter().cloned().collect()))
    }

    /// Make the live set equal to `desired` (one record per key), touching
    /// only keys that differ. Returns the number of keys changed.
    pub fn sync_to(&self, desired: &[HotRecord]) -> Result<usize> {
        let mut guard = self.files.lock();
        let files = guard.as_mut().ok_or(Error::ReadOnly)?;
        self.repair_if_poisoned(files)?;
        self.failpoints.check(FailPoint::HotApply)?;
        let (removals, inserts) = {
            let st = self.state.read();
            let mut want: HashMap<Key, &HotRecord> = HashMap::with_capacity(desired.len());
            for r in desired {
                if r.embedding.dimension() != self.dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim,
                        got: r.embedding.dimension(),
                    });
                }
                if want.insert((r.doc_id.clone(), r.position), r).is_some() {
                    return Err(Error::Conflict {
                        doc_id: r.doc_id.clone(),
                        position: r.position,
                    });
                }
            }
            let mut removals = Vec::new();
            for (key, &slot) in &st.live {
                let cur = &st.records[slot as usize];
                match want.get(key) {
                    Some(w) if w.chunk_id == cur.chunk_id && w.valid_from == cur.valid_from => {
                        want.remove(key);
                    }
                    _ => removals.push(slot),
                }
            }
            let mut inserts: Vec<HotRecord> = want.into_values().cloned().collect();
            inserts.sort_by(|a, b| (&a.doc_id, a.position).cmp(&(&b.doc_id, b.position)));
            removals.sort_unstable();
            (removals, inserts)
        };
        let changed = removals.len().max(inserts.len());
        if removals.is_empty() && inserts.is_empty() {
            return Ok(0);
        }
        self.write(files, removals, inserts)?;
        Ok(changed)
    }

    fn write(&self, files: &mut HotFiles, removals: Vec<Slot>, inserts: Vec<HotRecord>) -> Result<()> {
        let res = files.append_records(&inserts).and_then(|_| {
            self.failpoints.check(FailPoint::MidHotApply)?;
            let slots: Vec<u64> = removals.iter().map(|&s| s as u64).collect();
            files.append_tombstones(&slots)
        });
        if let Err(e) = res {
            self.poisoned.store(true, Ordering::SeqCst);
            return Err(e);
        }
        let mut st = self.state.write();
        for s in removals {
            st.index.tombstone(s);
            let r = &st.records[s as usize];
            let key = (r.doc_id.clone(), r.position);
            st.live.remove(&key);
        }
        for r in inserts {
            let s = st.index.insert(r.embedding.as_slice());
            st.live.insert((r.doc_id.clone(), r.position), s);
            st.records.push(r);
        }
        Ok(())
    }

    fn repair_if_poisoned(&self, files: &mut HotFiles) -> Result<()> {
        if !self.poisoned.load(Ordering::SeqCst) {
            return Ok(());
        }
        let (fresh, loaded) = HotFiles::open(&self.dir)?;
        *files = fresh;
        let (state, shadowed) = HotState::replay(loaded, self.dim, self.params_now())?;
        files.append_tombstones(&shadowed)?;
        *self.state.write() = state;
        self.poisoned.store(false, Ordering::SeqCst);
        Ok(())
    }

    fn params_now(&self) -> HnswParams {
        self.state.read().index.params()
    }

    /// Top-k active records by cosine similarity, best first, ties by chunk_id.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<(HotRecord, f32)>> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let st = self.state.read();
        let mut hits: Vec<(&HotRecord, f32)> = st
            .index
            .search(query, k)
            .into_iter()
            .map(|(s, sim)| (&st.records[s as usize], sim))
            .collect();
        hits.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| a.0.chunk_id.cmp(&b.0.chunk_id))
                .then_with(|| a.0.key().cmp(&b.0.key()))
        });
        hits.truncate(k);
        Ok(hits.into_iter().map(|(r, s)| (r.clone(), s)).collect())
    }

    pub fn get(&self, doc_id: &str, position: u64) -> Option<HotRecord> {
        let st = self.state.read();
        st.live_slot(doc_id, position)
            .map(|s| st.records[s as usize].clone())
    }

    /// All live records ordered by (doc_id, position).
    pub fn live_records(&self) -> Vec<HotRecord> {
        let st = self.state.read();
        let mut out: Vec<HotRecord> = st
            .live
            .values()
            .map(|&s| st.records[s as usize].clone())
            .collect();
        out.sort_by(|a, b| a.key().cmp(&b.key()));
        out
    }

    pub fn active_count(&self) -> usize {
        self.state.read().live.len()
    }

    pub fn stats(&self) -> HotStats {
        let st = self.state.read();
        let bytes_on_disk = [records::RECORDS_FILE, records::TOMBSTONES_FILE]
            .iter()
            .filter_map(|f| std::fs::metadata(self.dir.join(f)).ok())
            .map(|m| m.len())
            .sum();
        HotStats {
            active_count: st.live.len(),
            tombstone_count: st.index.tombstone_count(),
            dimension: self.dim,
            params: st.index.params(),
            bytes_on_disk,
        }
    }

    pub fn tombstone_ratio(&self) -> f64 {
        let st = self.state.read();
        if st.index.is_empty() {
            0.0
        } else {
            st.index.tombstone_count() as f64 / st.index.len() as f64
        }
    }

    /// Rebuild when tombstones exceed the threshold. Returns whether it did.
    pub fn compact(&self) -> Result<bool> {
        if self.tombstone_ratio() <= COMPACTION_THRESHOLD {
            return Ok(false);
        }
        self.force_compact()?;
        Ok(true)
    }

    /// Rewrite the record file with live records only and rebuild the graph.
    /// Searches keep using the old graph until the swap.
    pub fn force_compact(&self) -> Result<()> {
        let mut guard = self.files.lock();
        let files = guard.as_mut().ok_or(Error::ReadOnly)?;
        self.repair_if_poisoned(files)?;
        let (live, params) = {
            let st = self.state.read();
            let live: Vec<HotRecord> = (0..st.index.len() as Slot)
                .filter(|&s| st.index.is_live(s))
                .map(|s| st.records[s as usize].clone())
                .collect();
            (live, st.index.params())
        };
        let loaded = Loaded {
            records: live.clone(),
            tombstones: Vec::new(),
            generation: 0,
        };
        let (fresh, _) = HotState::replay(loaded, self.dim, params)?;
        if let Err(e) = files.rewrite(&live) {
            self.poisoned.store(true, Ordering::SeqCst);
            return Err(e);
        }
        *self.state.write() = fresh;
        Ok(())
    }

    /// Layer-0 reachability of every live slot from the entry point.
    pub fn graph_connected(&self) -> bool {
        let st = self.state.read();
        st.index.reachable_live_from_entry() == st.index.live_len()
    }

    /// Embedding of the live record at a key, for callers that reuse vectors.
    pub fn embedding_at(&self, doc_id: &str, position: u64) -> Option<Embedding> {
        self.get(doc_id, position).map(|r| r.embedding)
    }
}
