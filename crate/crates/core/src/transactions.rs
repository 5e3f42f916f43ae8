//! Dual-tier commits: write-ahead log, compensation, reconciliation.
//!
//! A commit walks the WAL entry `pending → cold_written → committed`. The
//! cold transaction is appended hidden and only revealed once the hot tier
//! has applied the batch, so a reader never sees cold history the hot tier
//! lacks. Anything left in between by a fault or crash is settled by
//! [`Writer::reconcile`]: cold_written entries are pushed through to the hot
//! tier (or compensated after repeated failure), pending ones compensated.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chunking::ChunkId;
use crate::clock::TimestampMs;
use crate::cold::{ColdEvent, ColdRecord};
use crate::error::{Error, Result};
use crate::failpoint::FailPoint;
use crate::frame::{decode_payload, encode_frame, encode_payload, FrameFile};
use crate::hot::{HotMutation, HotRecord};
use crate::store::{Store, Writer};

pub const WAL_FILE: &str = "wal.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalState {
    Pending,
    ColdWritten,
    Committed,
    Compensated,
}

impl WalState {
    pub fn is_terminal(self) -> bool {
        matches!(self, WalState::Committed | WalState::Compensated)
    }

    fn can_become(self, next: WalState) -> bool {
        use WalState::*;
        matches!(
            (self, next),
            (Pending, ColdWritten) | (ColdWritten, Committed) | (ColdWritten, Compensated) | (Pending, Compensated)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalEntry {
    pub wal_id: u64,
    pub state: WalState,
    pub cold_txn_version: Option<u64>,
    pub created_ts: TimestampMs,
    pub updated_ts: TimestampMs,
    /// SHA-256 of the encoded event batch.
    pub payload_digest: String,
}

/// One appended WAL frame: a transition of one entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct WalRecord {
    wal_id: u64,
    state: WalState,
    cold_txn_version: Option<u64>,
    ts: TimestampMs,
    payload_digest: Option<String>,
}

#[derive(Debug)]
pub struct Wal {
    file: Mutex<FrameFile>,
    entries: RwLock<BTreeMap<u64, WalEntry>>,
}

impl Wal {
    pub fn open(path: &Path, writable: bool) -> Result<Self> {
        let (file, bytes, scan) = FrameFile::open(path, writable)?;
        let mut entries: BTreeMap<u64, WalEntry> = BTreeMap::new();
        for f in &scan.frames {
            let rec: WalRecord = decode_payload(path, f.offset, &bytes[f.start..f.end])?;
            let corrupt = |reason: String| Error::Corrupt {
                path: path.to_path_buf(),
                offset: f.offset,
                reason,
            };
            match entries.get_mut(&rec.wal_id) {
                None if rec.state == WalState::Pending => {
                    if entries.last_key_value().is_some_and(|(&k, _)| k >= rec.wal_id) {
                        return Err(corrupt(format!("wal_id {} out of sequence", rec.wal_id)));
                    }
                    entries.insert(
                        rec.wal_id,
                        WalEntry {
                            wal_id: rec.wal_id,
                            state: WalState::Pending,
                            cold_txn_version: None,
                            created_ts: rec.ts,
                            updated_ts: rec.ts,
                            payload_digest: rec.payload_digest.unwrap_or_default(),
                        },
                    );
                }
                Some(e) if e.state.can_become(rec.state) => {
                    e.state = rec.state;
                    e.updated_ts = rec.ts;
                    if rec.cold_txn_version.is_some() {
                        e.cold_txn_version = rec.cold_txn_version;
                    }
                }
                _ => {
                    return Err(corrupt(format!(
                        "illegal transition to {:?} for wal entry {}",
                        rec.state, rec.wal_id
                    )))
                }
            }
        }
        Ok(Self {
            file: Mutex::new(file),
            entries: RwLock::new(entries),
        })
    }

    fn append(&self, rec: &WalRecord) -> Result<()> {
        self.file.lock().append(&encode_frame(&encode_payload(rec)))?;
        Ok(())
    }

    /// Durably open a new pending entry.
    pub fn begin(&self, payload_digest: String, ts: TimestampMs) -> Result<u64> {
        let wal_id = self.entries.read().last_key_value().map_or(1, |(&k, _)| k + 1);
        self.append(&WalRecord {
            wal_id,
            state: WalState::Pending,
            cold_txn_version: None,
            ts,
            payload_digest: Some(payload_digest.clone()),
        })?;
        self.entries.write().insert(
            wal_id,
            WalEntry {
                wal_id,
                state: WalState::Pending,
                cold_txn_version: None,
                created_ts: ts,
                updated_ts: ts,
                payload_digest,
            },
        );
        Ok(wal_id)
    }

    /// Durably record a state transition.
    pub fn advance(
        &self,
        wal_id: u64,
        state: WalState,
        cold_txn_version: Option<u64>,
        ts: TimestampMs,
    ) -> Result<()> {
        let cur = self
            .get(wal_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown wal entry {wal_id}")))?;
        if !cur.state.can_become(state) {
            return Err(Error::InvalidInput(format!(
                "illegal wal transition {:?} -> {state:?} for entry {wal_id}",
                cur.state
            )));
        }
        self.append(&WalRecord {
            wal_id,
            state,
            cold_txn_version,
            ts,
            payload_digest: None,
        })?;
        let mut entries = self.entries.write();
        let e = entries.get_mut(&wal_id).expect("entry checked above");
        e.state = state;
        e.updated_ts = ts;
        if cold_txn_version.is_some() {
            e.cold_txn_version = cold_txn_version;
        }
        Ok(())
    }

    pub fn get(&self, wal_id: u64) -> Option<WalEntry> {
        self.entries.read().get(&wal_id).cloned()
    }

    pub fn entries(&self) -> Vec<WalEntry> {
        self.entries.read().values().cloned().collect()
    }

    /// Entries not yet committed or compensated, oldest first.
    pub fn unresolved(&self) -> Vec<WalEntry> {
        self.entries
            .read()
            .values()
            .filter(|e| !e.state.is_terminal())
            .cloned()
            .collect()
    }

    pub fn unresolved_ids(&self) -> HashSet<u64> {
        self.unresolved().iter().map(|e| e.wal_id).collect()
    }
}

pub fn payload_digest(events: &[ColdEvent]) -> String {
    hex::encode(Sha256::digest(encode_payload(&events)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CommitOutcome {
    pub wal_id: u64,
    pub txn_version: u64,
    pub state: WalState,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReconcileReport {
    /// cold_written entries pushed through to committed.
    pub repaired: usize,
    /// Entries settled by compensation.
    pub compensated: usize,
    /// Entries younger than the staleness threshold, left alone.
    pub skipped: usize,
    /// Documents whose change-detection hashes were rewritten from the cold tier.
    pub hash_store_resynced: usize,
    pub errors: Vec<String>,
}

/// A record present in one tier but not the other.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct TierRecordRef {
    pub doc_id: String,
    pub position: u64,
    pub chunk_id: ChunkId,
    pub valid_from: TimestampMs,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DivergenceReport {
    pub only_hot: Vec<TierRecordRef>,
    pub only_cold: Vec<TierRecordRef>,
}

impl DivergenceReport {
    pub fn is_empty(&self) -> bool {
        self.only_hot.is_empty() && self.only_cold.is_empty()
    }

    pub fn len(&self) -> usize {
        self.only_hot.len() + self.only_cold.len()
    }
}

pub(crate) fn hot_record(r: &ColdRecord) -> HotRecord {
    HotRecord {
        chunk_id: r.chunk_id.clone(),
        doc_id: r.doc_id.clone(),
        position: r.position,
        valid_from: r.valid_from,
        content: r.content.clone(),
        embedding: r.embedding.clone(),
    }
}

impl Writer<'_> {
    /// Write `events` to the cold tier and `hot_mutations` to the hot tier as
    /// one logical transaction. Success means both tiers hold the change.
    pub fn commit_dual(
        &self,
        events: Vec<ColdEvent>,
        hot_mutations: &[HotMutation],
        commit_ts: TimestampMs,
    ) -> Result<CommitOutcome> {
        let store = self.store();
        let fp = store.failpoints();
        let now = || store.clock().now_ms();

        let wal_id = store.wal().begin(payload_digest(&events), now())?;
        fp.check(FailPoint::AfterPending)?;

        let version = match store.cold().append(events, commit_ts, Some(wal_id), true) {
            Ok(v) => v,
            Err(e) if e.is_crash() => return Err(e),
            Err(e) => {
                store.wal().advance(wal_id, WalState::Compensated, None, now())?;
                return Err(e);
            }
        };
        fp.check(FailPoint::AfterColdAppend)?;
        store.wal().advance(wal_id, WalState::ColdWritten, Some(version), now())?;
        fp.check(FailPoint::AfterColdWritten)?;

        if let Err(source) = store.hot().apply_batch(hot_mutations) {
            return Err(Error::HotApply {
                wal_id,
                source: Box::new(source),
            });
        }
        fp.check(FailPoint::AfterHotApply)?;
        store.wal().advance(wal_id, WalState::Committed, Some(version), now())?;
        store.cold().reveal(version)?;
        if store.config().auto_compact {
            // Best effort; a failed rewrite leaves the old generation in place.
            let _ = store.hot().compact();
        }
        Ok(CommitOutcome {
            wal_id,
            txn_version: version,
            state: WalState::Committed,
        })
    }

    /// Settle every unresolved WAL entry older than the staleness threshold,
    /// then bring the hash store in line with the cold tier.
    pub fn reconcile(&self) -> ReconcileReport {
        let store = self.store();
        let cfg = store.config();
        let now = store.clock().now_ms();
        let mut report = ReconcileReport::default();
        let mut touched = false;

        for entry in store.wal().unresolved() {
            if now.saturating_sub(entry.updated_ts) < cfg.staleness_threshold_ms {
                report.skipped += 1;
                continue;
            }
            touched = true;
            match self.settle(&entry) {
                Ok(WalState::Committed) => report.repaired += 1,
                Ok(_) => report.compensated += 1,
                Err(e) => report.errors.push(format!("wal entry {}: {e}", entry.wal_id)),
            }
        }
        if touched {
            if let Err(e) = store.hot().sync_to(&hot_view(&store.cold().active_records())) {
                report.errors.push(format!("hot tier resync: {e}"));
            }
        }
        match self.resync_hash_store() {
            Ok(n) => report.hash_store_resynced = n,
            Err(e) => report.errors.push(format!("hash store resync: {e}")),
        }
        report
    }

    fn settle(&self, entry: &WalEntry) -> Result<WalState> {
        let store = self.store();
        let cold = store.cold();
        let wal = store.wal();
        let now = || store.clock().now_ms();
        let txn = cold.txn_for_wal(entry.wal_id);

        if entry.state == WalState::Pending {
            if let Some(t) = txn.filter(|t| !t.compensated) {
                cold.compensate(t.txn_version, Some(entry.wal_id))?;
            }
            wal.advance(entry.wal_id, WalState::Compensated, None, now())?;
            return Ok(WalState::Compensated);
        }

        let Some(t) = txn.filter(|t| !t.compensated) else {
            wal.advance(entry.wal_id, WalState::Compensated, None, now())?;
            return Ok(WalState::Compensated);
        };
        let target = hot_view(&cold.active_records_with(t.txn_version)?);
        let mut last_err = None;
        for _ in 0..store.config().max_hot_retries.max(1) {
            match store.hot().sync_to(&target) {
                Ok(_) => {
                    last_err = None;
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        if last_err.is_none() {
            wal.advance(entry.wal_id, WalState::Committed, Some(t.txn_version), now())?;
            cold.reveal(t.txn_version)?;
            return Ok(WalState::Committed);
        }
        cold.compensate(t.txn_version, Some(entry.wal_id))?;
        wal.advance(entry.wal_id, WalState::Compensated, None, now())?;
        Ok(WalState::Compensated)
    }

    /// Rewrite hash-store entries that disagree with the cold active set.
    fn resync_hash_store(&self) -> Result<usize> {
        let store = self.store();
        let mut want: BTreeMap<String, Vec<ChunkId>> = BTreeMap::new();
        for r in store.cold().active_records() {
            want.entry(r.doc_id).or_default().push(r.chunk_id);
        }
        let have = store.hashes().snapshot();
        let mut changes: Vec<(String, Option<Vec<ChunkId>>)> = Vec::new();
        for (doc, ids) in &want {
            if have.get(doc) != Some(ids) {
                changes.push((doc.clone(), Some(ids.clone())));
            }
        }
        for doc in have.keys() {
            if !want.contains_key(doc) && !have[doc].is_empty() {
                changes.push((doc.clone(), Some(Vec::new())));
            }
        }
        let n = changes.len();
        if n > 0 {
            store.hashes().replace_many(changes)?;
        }
        Ok(n)
    }
}

fn hot_view(records: &[ColdRecord]) -> Vec<HotRecord> {
    records.iter().map(hot_record).collect()
}

impl Store {
    /// Compare the hot live set with the cold tier's current active set.
    pub fn verify_tiers(&self) -> DivergenceReport {
        let key = |doc_id: &str, position, chunk_id: &ChunkId, valid_from| TierRecordRef {
            doc_id: doc_id.to_owned(),
            position,
            chunk_id: chunk_id.clone(),
            valid_from,
        };
        let hot: HashSet<TierRecordRef> = self
            .hot()
            .live_records()
            .iter()
            .map(|r| key(&r.doc_id, r.position, &r.chunk_id, r.valid_from))
            .collect();
        let cold: HashSet<TierRecordRef> = self
            .cold()
            .active_records()
            .iter()
            .map(|r| key(&r.doc_id, r.position, &r.chunk_id, r.valid_from))
            .collect();
        let mut report = DivergenceReport {
            only_hot: hot.difference(&cold).cloned().collect(),
            only_cold: cold.difference(&hot).cloned().collect(),
        };
        report.only_hot.sort();
        report.only_cold.sort();
        report
    }

    pub fn reconcile(&self) -> Result<ReconcileReport> {
        Ok(self.writer_unchecked()?.reconcile())
    }

    pub fn commit_dual(
        &self,
        events: Vec<ColdEvent>,
        hot_mutations: &[HotMutation],
        commit_ts: TimestampMs,
    ) -> Result<CommitOutcome> {
        self.writer()?.commit_dual(events, hot_mutations, commit_ts)
    }
}

/// Background thread running reconcile every `interval` while work is
/// outstanding. Stops when dropped.
#[derive(Debug)]
pub struct Reconciler {
    stop: Option<mpsc::Sender<()>>,
    handle: Option<JoinHandle<()>>,
}

pub fn spawn_reconciler(store: Arc<Store>, interval: Duration) -> Reconciler {
    let (tx, rx) = mpsc::channel::<()>();
    let handle = std::thread::spawn(move || loop {
        match rx.recv_timeout(interval) {
            Err(RecvTimeoutError::Timeout) => {
                if !store.wal().unresolved().is_empty() {
                    let _ = store.reconcile();
                }
            }
            _ => return,
        }
    });
    Reconciler {
        stop: Some(tx),
        handle: Some(handle),
    }
}

impl Drop for Reconciler {
    fn drop(&mut self) {
        drop(self.stop.take());
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
