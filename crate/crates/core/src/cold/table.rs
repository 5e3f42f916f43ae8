use std::collections::{BTreeMap, HashMap, HashSet};

use super::record::{ChangeType, ColdEvent, ColdRecord, RecordStatus};
use crate::clock::TimestampMs;

#[derive(Debug, Clone)]
struct Entry {
    rec: ColdRecord,
    created: u64,
    ended: Option<u64>,
}

/// Materialized fold of visible transactions.
#[derive(Debug)]
pub(super) struct Table {
    dim: usize,
    entries: Vec<Entry>,
    active: HashMap<String, BTreeMap<u64, usize>>,
    doc_last_ts: HashMap<String, TimestampMs>,
}

impl Table {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            active: HashMap::new(),
            doc_last_ts: HashMap::new(),
        }
    }

    fn active_idx(&self, doc_id: &str, position: u64) -> Option<usize> {
        self.active.get(doc_id)?.get(&position).copied()
    }

    /// Reject a transaction that does not apply cleanly to the current state.
    pub fn check(&self, events: &[ColdEvent], commit_ts: TimestampMs) -> Result<(), String> {
        if events.is_empty() {
            return Err("empty transaction".into());
        }
        // key -> (entry index, superseded rather than deleted)
        let mut removed: HashMap<(&str, u64), (usize, bool)> = HashMap::new();
        let mut parents_used: HashSet<usize> = HashSet::new();
        let mut inserted: HashSet<(&str, u64)> = HashSet::new();
        let mut seen_insert = false;
        for e in events {
            match e {
                ColdEvent::Supersede {
                    doc_id,
                    position,
                    chunk_id,
                    valid_to,
                }
                | ColdEvent::Delete {
                    doc_id,
                    position,
                    chunk_id,
                    valid_to,
                } => {
                    if seen_insert {
                        return Err("removal events must precede inserts".into());
                    }
                    let key = (doc_id.as_str(), *position);
                    let idx = self
                        .active_idx(doc_id, *position)
                        .filter(|_| !removed.contains_key(&key))
                        .ok_or_else(|| format!("stale reference: no active record at ({doc_id}, {position})"))?;
                    let cur = &self.entries[idx].rec;
                    if cur.chunk_id != *chunk_id {
                        return Err(format!(
                            "stale reference: ({doc_id}, {position}) holds {} not {}",
                            cur.chunk_id.short(),
                            chunk_id.short()
                        ));
                    }
                    if *valid_to != commit_ts {
                        return Err(format!("valid_to {valid_to} differs from commit_ts {commit_ts}"));
                    }
                    if *valid_to <= cur.valid_from {
                        return Err(format!(
                            "empty validity interval at ({doc_id}, {position}): [{}, {valid_to})",
                            cur.valid_from
                        ));
                    }
                    removed.insert(key, (idx, matches!(e, ColdEvent::Supersede { .. })));
                }
                ColdEvent::Insert(r) => {
                    seen_insert = true;
                    if r.embedding.dimension() != self.dim {
                        return Err(format!(
                            "embedding dimension {} (expected {})",
                            r.embedding.dimension(),
                            self.dim
                        ));
                    }
                    if r.valid_from != commit_ts || r.valid_to.is_some() || r.status != RecordStatus::Active {
                        return Err(format!(
                            "inserted record at ({}, {}) must be active from the commit time",
                            r.doc_id, r.position
                        ));
                    }
                    let key = (r.doc_id.as_str(), r.position);
                    let occupied = self.active_idx(&r.doc_id, r.position).is_some() && !removed.contains_key(&key);
                    if occupied || !inserted.insert(key) {
                        return Err(format!("conflict: ({}, {}) is already occupied", r.doc_id, r.position));
                    }
                    match r.change_type {
                        ChangeType::Insert => {
                            if r.version_number != 1 || r.parent_hash.is_some() || r.parent_position.is_some() {
                                return Err("insert must start a lineage at version 1 with no parent".into());
                            }
                        }
                        ChangeType::Update => {
                            let (Some(ph), Some(pp)) = (&r.parent_hash, r.parent_position) else {
                                return Err("update must name its parent".into());
                            };
                            let parent = removed
                                .get(&(r.doc_id.as_str(), pp))
                                .filter(|(idx, superseded)| {
                                    *superseded && self.entries[*idx].rec.chunk_id == *ph
                                })
                                .map(|(idx, _)| *idx)
                                .ok_or_else(|| {
                                    format!("update at ({}, {}) has no parent superseded in this transaction", r.doc_id, r.position)
                                })?;
                            if !parents_used.insert(parent) {
                                return Err("two updates share one parent".into());
                            }
                            if r.version_number != self.entries[parent].rec.version_number + 1 {
                                return Err("update version must be parent version + 1".into());
                            }
                        }
                        ChangeType::Delete => return Err("an inserted record cannot be a delete".into()),
                    }
                }
            }
        }
        Ok(())
    }

    /// Apply a transaction that passed [`check`](Self::check).
    pub fn apply(&mut self, events: &[ColdEvent], version: u64) {
        for e in events {
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
                    let idx = self
                        .active
                        .get_mut(doc_id)
                        .and_then(|m| m.remove(position))
                        .expect("checked removal");
                    let entry = &mut self.entries[idx];
                    entry.rec.valid_to = Some(*valid_to);
                    entry.rec.status = if matches!(e, ColdEvent::Supersede { .. }) {
                        RecordStatus::Superseded
                    } else {
                        RecordStatus::Deleted
                    };
                    entry.ended = Some(version);
                    self.doc_last_ts.insert(doc_id.clone(), *valid_to);
                }
                ColdEvent::Insert(r) => {
                    let idx = self.entries.len();
                    self.active
                        .entry(r.doc_id.clone())
                        .or_default()
                        .insert(r.position, idx);
                    self.doc_last_ts.insert(r.doc_id.clone(), r.valid_from);
                    self.entries.push(Entry {
                        rec: r.clone(),
                        created: version,
                        ended: None,
                    });
                }
            }
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &ColdRecord> {
        self.entries.iter().map(|e| &e.rec)
    }

    pub fn alive_at_version(&self, version: u64) -> impl Iterator<Item = &ColdRecord> {
        self.entries
            .iter()
            .filter(move |e| e.created <= version && e.ended.is_none_or(|end| end > version))
            .map(|e| &e.rec)
    }

    pub fn active_records(&self) -> Vec<ColdRecord> {
        let mut docs: Vec<&String> = self.active.keys().collect();
        docs.sort();
        docs.into_iter()
            .flat_map(|d| self.active[d].values().map(|&i| self.entries[i].rec.clone()))
            .collect()
    }

    pub fn doc_active(&self, doc_id: &str) -> Vec<ColdRecord> {
        self.active
            .get(doc_id)
            .map(|m| m.values().map(|&i| self.entries[i].rec.clone()).collect())
            .unwrap_or_default()
    }

    pub fn doc_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.doc_last_ts.keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn doc_last_ts(&self, doc_id: &str) -> Option<TimestampMs> {
        self.doc_last_ts.get(doc_id).copied()
    }
}
