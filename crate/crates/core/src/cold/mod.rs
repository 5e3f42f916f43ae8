//! Cold tier: every chunk version ever committed, as an append-only event log.
//!
//! Each transaction is one CRC frame in `commits.log`. The in-memory table is
//! a fold of the *visible* transactions: a transaction is hidden while its
//! WAL entry is unresolved and excluded for good once a compensation marker
//! names it. Snapshots are filters over that table.

mod record;
mod table;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::clock::TimestampMs;
use crate::error::{Error, Result};
use crate::failpoint::{FailAction, FailPoint, Failpoints};
use crate::frame::{decode_payload, encode_frame, encode_payload, FrameFile};

pub use record::{ChangeType, ColdEvent, ColdRecord, RecordStatus};
use table::Table;

pub const LOG_FILE: &str = "commits.log";

#[derive(Debug, Clone, Serialize, Deserialize)]
enum TxnBody {
    Events(Vec<ColdEvent>),
    Compensation { target: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TxnFrame {
    txn_version: u64,
    commit_ts: TimestampMs,
    wal_id: Option<u64>,
    body: TxnBody,
}

#[derive(Debug, Clone)]
struct StoredTxn {
    frame: TxnFrame,
    offset: u64,
    hidden: bool,
    compensated: bool,
}

impl StoredTxn {
    fn visible_events(&self) -> Option<&[ColdEvent]> {
        match &self.frame.body {
            TxnBody::Events(ev) if !self.hidden && !self.compensated => Some(ev),
            _ => None,
        }
    }
}

/// Where a transaction stands with respect to snapshot visibility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TxnInfo {
    pub txn_version: u64,
    pub commit_ts: TimestampMs,
    pub wal_id: Option<u64>,
    pub hidden: bool,
    pub compensated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotPoint {
    AsOf(TimestampMs),
    Version(u64),
}

/// Records valid at one point, ordered by (doc_id, position).
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotView {
    pub at: SnapshotPoint,
    pub records: Vec<ColdRecord>,
}

impl SnapshotView {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ColdStats {
    pub total_records: usize,
    pub active_records: usize,
    pub superseded: usize,
    pub deleted: usize,
    pub txn_count: u64,
    pub bytes_on_disk: u64,
}

/// Per-transaction change counts for one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TimelineEntry {
    /// 1-based version of the document.
    pub version: u64,
    pub txn_version: u64,
    pub commit_ts: TimestampMs,
    pub inserts: usize,
    /// In-place content updates.
    pub updates: usize,
    /// Updates that only change position.
    pub moves: usize,
    pub deletes: usize,
}

#[derive(Debug)]
struct ColdState {
    txns: Vec<StoredTxn>,
    table: Table,
    last_commit_ts: Option<TimestampMs>,
    bytes: u64,
}

impl ColdState {
    fn refold(&mut self, dim: usize) {
        let mut table = Table::new(dim);
        for t in &self.txns {
            if let Some(ev) = t.visible_events() {
                table
                    .check(ev, t.frame.commit_ts)
                    .expect("visible transactions were validated against this order");
                table.apply(ev, t.frame.txn_version);
            }
        }
        self.table = table;
    }

    fn get(&self, version: u64) -> Result<&StoredTxn> {
        version
            .checked_sub(1)
            .and_then(|i| self.txns.get(i as usize))
            .ok_or(Error::VersionOutOfRange {
                requested: version,
                latest: self.txns.len() as u64,
            })
    }

    fn outstanding_hidden(&self) -> Option<u64> {
        self.txns
            .iter()
            .find(|t| t.hidden && !t.compensated)
            .map(|t| t.frame.txn_version)
    }
}

#[derive(Debug)]
pub struct ColdTier {
    path: PathBuf,
    dim: usize,
    failpoints: Arc<Failpoints>,
    file: Mutex<FrameFile>,
    writable: bool,
    state: RwLock<ColdState>,
}

impl ColdTier {
    /// Open `<dir>/commits.log`. Transactions whose `wal_id` is in
    /// `unresolved_wal_ids` start hidden.
    pub fn open(
        dir: &Path,
        dim: usize,
        failpoints: Arc<Failpoints>,
        writable: bool,
        unresolved_wal_ids: &HashSet<u64>,
    ) -> Result<Self> {
        if writable {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let path = dir.join(LOG_FILE);
        let (file, bytes, scan) = FrameFile::open(&path, writable)?;
        let corrupt = |offset: u64, reason: String| Error::Corrupt {
            path: path.clone(),
            offset,
            reason,
        };

        let mut txns: Vec<StoredTxn> = Vec::with_capacity(scan.frames.len());
        let mut last_ts: Option<TimestampMs> = None;
        for f in &scan.frames {
            let frame: TxnFrame = decode_payload(&path, f.offset, &bytes[f.start..f.end])?;
            if frame.txn_version != txns.len() as u64 + 1 {
                return Err(corrupt(
                    f.offset,
                    format!("txn_version {} out of sequence", frame.txn_version),
                ));
            }
            if last_ts.is_some_and(|t| frame.commit_ts < t) {
                return Err(corrupt(f.offset, "commit_ts went backwards".into()));
            }
            last_ts = Some(frame.commit_ts);
            if let TxnBody::Compensation { target } = frame.body {
                let t = target
                    .checked_sub(1)
                    .and_then(|i| txns.get_mut(i as usize))
                    .filter(|t| matches!(t.frame.body, TxnBody::Events(_)))
                    .ok_or_else(|| corrupt(f.offset, format!("compensation of unknown txn {target}")))?;
                t.compensated = true;
            }
            let hidden = frame.wal_id.is_some_and(|w| unresolved_wal_ids.contains(&w));
            txns.push(StoredTxn {
                frame,
                offset: f.offset,
                hidden,
                compensated: false,
            });
        }

        let mut table = Table::new(dim);
        for t in &txns {
            if let Some(ev) = t.visible_events() {
                table
                    .check(ev, t.frame.commit_ts)
                    .map_err(|reason| corrupt(t.offset, reason))?;
                table.apply(ev, t.frame.txn_version);
            }
        }

        Ok(Self {
            path,
            dim,
            failpoints,
            writable,
            state: RwLock::new(ColdState {
                txns,
                table,
                last_commit_ts: last_ts,
                bytes: scan.valid_len,
            }),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Validate and durably append one transaction. A `hidden` transaction
    /// is excluded from every read until [`reveal`](Self::reveal).
    pub fn append(
        &self,
        events: Vec<ColdEvent>,
        commit_ts: TimestampMs,
        wal_id: Option<u64>,
        hidden: bool,
    ) -> Result<u64> {
        if !self.writable {
            return Err(Error::ReadOnly);
        }
        let mut file = self.file.lock();
        let version = {
            let st = self.state.read();
            if let Some(v) = st.outstanding_hidden() {
                return Err(Error::Rejected(format!("transaction {v} is still unresolved")));
            }
            if let Some(last) = st.last_commit_ts.filter(|&t| commit_ts < t) {
                return Err(Error::Rejected(format!(
                    "commit_ts {commit_ts} precedes previous commit at {last}"
                )));
            }
            st.table.check(&events, commit_ts).map_err(Error::Rejected)?;
            st.txns.len() as u64 + 1
        };
        let frame = TxnFrame {
            txn_version: version,
            commit_ts,
            wal_id,
            body: TxnBody::Events(events),
        };
        let offset = self.write_frame(&mut file, &frame)?;
        let mut st = self.state.write();
        st.bytes = file.len();
        st.last_commit_ts = Some(commit_ts);
        if !hidden {
            if let TxnBody::Events(ev) = &frame.body {
                st.table.apply(ev, version);
            }
        }
        st.txns.push(StoredTxn {
            frame,
            offset,
            hidden,
            compensated: false,
        });
        Ok(version)
    }

    fn write_frame(&self, file: &mut FrameFile, frame: &TxnFrame) -> Result<u64> {
        let bytes = encode_frame(&encode_payload(frame));
        if let Some(action) = self.failpoints.hit(FailPoint::MidColdAppend) {
            file.append_torn(&bytes, bytes.len() / 2)?;
            match action {
                FailAction::Abort => std::process::abort(),
                FailAction::Crash => return Err(Error::InjectedCrash(FailPoint::MidColdAppend)),
                FailAction::Error => {
                    file.discard_tail()?;
                    return Err(Error::InjectedFault(FailPoint::MidColdAppend));
                }
            }
        }
        file.append(&bytes)
    }

    /// Make a hidden transaction visible.
    pub fn reveal(&self, version: u64) -> Result<()> {
        let mut st = self.state.write();
        let t = st.get(version)?;
        if t.compensated {
            return Err(Error::Rejected(format!("transaction {version} was compensated")));
        }
        if !t.hidden {
            return Ok(());
        }
        let is_tail = st.txns[version as usize..]
            .iter()
            .all(|t| t.visible_events().is_none());
        st.txns[version as usize - 1].hidden = false;
        if is_tail {
            let t = &st.txns[version as usize - 1];
            let TxnBody::Events(ev) = &t.frame.body else {
                unreachable!("only event transactions can be hidden")
            };
            let (ev, ts) = (ev.clone(), t.frame.commit_ts);
            st.table
                .check(&ev, ts)
                .map_err(|r| Error::Rejected(format!("cannot reveal {version}: {r}")))?;
            st.table.apply(&ev, version);
        } else {
            st.refold(self.dim);
        }
        Ok(())
    }

    /// Permanently exclude a hidden transaction by appending a marker.
    pub fn compensate(&self, target: u64, wal_id: Option<u64>) -> Result<u64> {
        if !self.writable {
            return Err(Error::ReadOnly);
        }
        let mut file = self.file.lock();
        let (version, ts) = {
            let st = self.state.read();
            let t = st.get(target)?;
            if !t.hidden || t.compensated || !matches!(t.frame.body, TxnBody::Events(_)) {
                return Err(Error::Rejected(format!(
                    "transaction {target} is not an unresolved event transaction"
                )));
            }
            (st.txns.len() as u64 + 1, st.last_commit_ts.unwrap_or(t.frame.commit_ts))
        };
        let frame = TxnFrame {
            txn_version: version,
            commit_ts: ts,
            wal_id,
            body: TxnBody::Compensation { target },
        };
        let bytes = encode_frame(&encode_payload(&frame));
        let offset = file.append(&bytes)?;
        let mut st = self.state.write();
        st.bytes = file.len();
        st.txns[target as usize - 1].compensated = true;
        st.txns.push(StoredTxn {
            frame,
            offset,
            hidden: false,
            compensated: false,
        });
        Ok(version)
    }

    pub fn txn_info(&self, version: u64) -> Option<TxnInfo> {
        let st = self.state.read();
        st.get(version).ok().map(info)
    }

    /// The event transaction written for a WAL entry, if it reached the log.
    pub fn txn_for_wal(&self, wal_id: u64) -> Option<TxnInfo> {
        let st = self.state.read();
        st.txns
            .iter()
            .find(|t| t.frame.wal_id == Some(wal_id) && matches!(t.frame.body, TxnBody::Events(_)))
            .map(info)
    }

    pub fn latest_version(&self) -> u64 {
        self.state.read().txns.len() as u64
    }

    pub fn last_commit_ts(&self) -> Option<TimestampMs> {
        self.state.read().last_commit_ts
    }

    /// Commit time of the latest visible event transaction.
    pub fn last_visible_commit_ts(&self) -> Option<TimestampMs> {
        let st = self.state.read();
        st.txns
            .iter()
            .rev()
            .find(|t| t.visible_events().is_some())
            .map(|t| t.frame.commit_ts)
    }

    pub fn snapshot_as_of(&self, ts: TimestampMs) -> SnapshotView {
        let st = self.state.read();
        let mut records: Vec<ColdRecord> = st
            .table
            .records()
            .filter(|r| r.valid_at(ts))
            .cloned()
            .collect();
        records.sort_by(|a, b| a.key().cmp(&b.key()));
        SnapshotView {
            at: SnapshotPoint::AsOf(ts),
            records,
        }
    }

    /// Visit every record valid at `ts` without materializing the view.
    pub fn for_each_as_of(&self, ts: TimestampMs, mut f: impl FnMut(&ColdRecord)) {
        let st = self.state.read();
        st.table.records().filter(|r| r.valid_at(ts)).for_each(&mut f);
    }

    /// Active records after folding the visible transactions up to `version`.
    pub fn snapshot_at_version(&self, version: u64) -> Result<SnapshotView> {
        let st = self.state.read();
        let latest = st.txns.len() as u64;
        if version > latest {
            return Err(Error::VersionOutOfRange {
                requested: version,
                latest,
            });
        }
        let mut records: Vec<ColdRecord> =
            st.table.alive_at_version(version).cloned().collect();
        records.sort_by(|a, b| a.key().cmp(&b.key()));
        Ok(SnapshotView {
            at: SnapshotPoint::Version(version),
            records,
        })
    }

    /// Currently active records, ordered by (doc_id, position).
    pub fn active_records(&self) -> Vec<ColdRecord> {
        self.state.read().table.active_records()
    }

    /// The active set as it would be if hidden transaction `version` were
    /// revealed.
    pub fn active_records_with(&self, version: u64) -> Result<Vec<ColdRecord>> {
        let st = self.state.read();
        let t = st.get(version)?;
        let TxnBody::Events(ev) = &t.frame.body else {
            return Err(Error::Rejected(format!("{version} is a compensation marker")));
        };
        if t.visible_events().is_some() {
            return Ok(st.table.active_records());
        }
        let mut active: BTreeMap<(String, u64), ColdRecord> = st
            .table
            .active_records()
            .into_iter()
            .map(|r| ((r.doc_id.clone(), r.position), r))
            .collect();
        for e in ev {
            match e {
                ColdEvent::Supersede { doc_id, position, .. }
                | ColdEvent::Delete { doc_id, position, .. } => {
                    active.remove(&(doc_id.clone(), *position));
                }
                ColdEvent::Insert(r) => {
                    active.insert((r.doc_id.clone(), r.position), r.clone());
                }
            }
        }
        Ok(active.into_values().collect())
    }

    /// Active records of one document, ordered by position.
    pub fn doc_active(&self, doc_id: &str) -> Vec<ColdRecord> {
        self.state.read().table.doc_active(doc_id)
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.state.read().table.doc_ids()
    }

    /// Commit time of the latest visible transaction touching `doc_id`.
    pub fn doc_last_ts(&self, doc_id: &str) -> Option<TimestampMs> {
        self.state.read().table.doc_last_ts(doc_id)
    }

    pub fn document_timeline(&self, doc_id: &str) -> Vec<TimelineEntry> {
        let st = self.state.read();
        let mut out = Vec::new();
        for t in &st.txns {
            let Some(ev) = t.visible_events() else { continue };
            let mut entry = TimelineEntry {
                version: out.len() as u64 + 1,
                txn_version: t.frame.txn_version,
                commit_ts: t.frame.commit_ts,
                inserts: 0,
                updates: 0,
                moves: 0,
                deletes: 0,
            };
            let mut touched = false;
            for e in ev.iter().filter(|e| e.doc_id() == doc_id) {
                touched = true;
                match e {
                    ColdEvent::Insert(r) if r.change_type == ChangeType::Insert => entry.inserts += 1,
                    ColdEvent::Insert(r) if r.is_move() => entry.moves += 1,
                    ColdEvent::Insert(_) => entry.updates += 1,
                    ColdEvent::Delete { .. } => entry.deletes += 1,
                    ColdEvent::Supersede { .. } => {}
                }
            }
            if touched {
                out.push(entry);
            }
        }
        out
    }

    /// The document's active records as of its `version`-th transaction.
    pub fn document_at_version(&self, doc_id: &str, version: u64) -> Result<Vec<ColdRecord>> {
        let timeline = self.document_timeline(doc_id);
        let entry = version
            .checked_sub(1)
            .and_then(|i| timeline.get(i as usize))
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "document {doc_id:?} has no version {version} ({} stored)",
                    timeline.len()
                ))
            })?;
        let st = self.state.read();
        let mut recs: Vec<ColdRecord> = st
            .table
            .alive_at_version(entry.txn_version)
            .filter(|r| r.doc_id == doc_id)
            .cloned()
            .collect();
        recs.sort_by_key(|r| r.position);
        Ok(recs)
    }

    /// Every record ever visible, in fold order.
    pub fn all_records(&self) -> Vec<ColdRecord> {
        self.state.read().table.records().cloned().collect()
    }

    pub fn stats(&self) -> ColdStats {
        let st = self.state.read();
        let mut s = ColdStats {
            txn_count: st.txns.len() as u64,
            bytes_on_disk: st.bytes,
            ..ColdStats::default()
        };
        for r in st.table.records() {
            s.total_records += 1;
            match r.status {
                RecordStatus::Active => s.active_records += 1,
                RecordStatus::Superseded => s.superseded += 1,
                RecordStatus::Deleted => s.deleted += 1,
            }
        }
        s
    }
}

fn info(t: &StoredTxn) -> TxnInfo {
    TxnInfo {
        txn_version: t.frame.txn_version,
        commit_ts: t.frame.commit_ts,
        wal_id: t.frame.wal_id,
        hidden: t.hidden,
        compensated: t.compensated,
    }
}
