//! Chunk-level change detection against the per-document hash store.
//!
//! Classification of a new version against the previous hash list:
//!
//! 1. same hash at the same position: unchanged
//! 2. hash present in the old version at another (unclaimed) position: moved,
//!    old occurrences claimed in ascending position order
//! 3. leftover new position whose old slot is still unclaimed: modified
//! 4. any other leftover new position: new
//! 5. leftover old positions: deleted
//!
//! Only new and modified chunks need embedding.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::chunking::{Chunk, ChunkId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeSet {
    /// (position, chunk_id)
    pub new: Vec<(u64, ChunkId)>,
    /// (position, old_chunk_id, new_chunk_id)
    pub modified: Vec<(u64, ChunkId, ChunkId)>,
    /// (old_position, chunk_id)
    pub deleted: Vec<(u64, ChunkId)>,
    /// (position, chunk_id)
    pub unchanged: Vec<(u64, ChunkId)>,
    /// (old_position, new_position, chunk_id)
    pub moved: Vec<(u64, u64, ChunkId)>,
}

impl ChangeSet {
    /// True when the new version is identical to the old one.
    pub fn is_noop(&self) -> bool {
        self.new.is_empty() && self.modified.is_empty() && self.deleted.is_empty() && self.moved.is_empty()
    }

    /// Number of chunks that need a fresh embedding.
    pub fn embedding_workload(&self) -> usize {
        self.new.len() + self.modified.len()
    }
}

pub fn detect_changes(old_hashes: &[ChunkId], new_chunks: &[Chunk]) -> ChangeSet {
    let new_hashes: Vec<ChunkId> = new_chunks.iter().map(|c| c.chunk_id.clone()).collect();
    classify(old_hashes, &new_hashes)
}

/// Classify on bare hash sequences (positions are the slice indices).
pub fn classify(old: &[ChunkId], new: &[ChunkId]) -> ChangeSet {
    let mut old_used = vec![false; old.len()];
    let mut new_done = vec![false; new.len()];
    let mut cs = ChangeSet::default();

    for p in 0..old.len().min(new.len()) {
        if old[p] == new[p] {
            old_used[p] = true;
            new_done[p] = true;
            cs.unchanged.push((p as u64, new[p].clone()));
        }
    }

    let mut free_old: HashMap<&ChunkId, VecDeque<usize>> = HashMap::new();
    for (q, h) in old.iter().enumerate() {
        if !old_used[q] {
            free_old.entry(h).or_default().push_back(q);
        }
    }
    for (p, h) in new.iter().enumerate() {
        if new_done[p] {
            continue;
        }
        if let Some(q) = free_old.get_mut(h).and_then(VecDeque::pop_front) {
            old_used[q] = true;
            new_done[p] = true;
            cs.moved.push((q as u64, p as u64, h.clone()));
        }
    }

    for (p, h) in new.iter().enumerate() {
        if new_done[p] {
            continue;
        }
        if p < old.len() && !old_used[p] {
            old_used[p] = true;
            cs.modified.push((p as u64, old[p].clone(), h.clone()));
        } else {
            cs.new.push((p as u64, h.clone()));
        }
    }

    for (q, h) in old.iter().enumerate() {
        if !old_used[q] {
            cs.deleted.push((q as u64, h.clone()));
        }
    }
    cs
}

type Entries = BTreeMap<String, Arc<Vec<ChunkId>>>;

/// doc_id → chunk-id list of the latest ingested version, persisted as a JSON
/// object `{doc_id: [hex, ...]}`.
#[derive(Debug)]
pub struct HashStore {
    path: PathBuf,
    entries: RwLock<Entries>,
}

impl HashStore {
    /// Load from `path`. A missing file is an empty store; anything unreadable
    /// or malformed is an error.
    pub fn load(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let entries = match fs::read(&path) {
            Ok(bytes) => parse_store(&path, &bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Entries::new(),
            Err(e) => {
                return Err(Error::HashStoreLoad {
                    path,
                    reason: e.to_string(),
                })
            }
        };
        Ok(Self {
            path,
            entries: RwLock::new(entries),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, doc_id: &str) -> Option<Arc<Vec<ChunkId>>> {
        self.entries.read().get(doc_id).cloned()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.entries.read().contains_key(doc_id)
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.entries.read().keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().is_empty()
    }

    pub fn snapshot(&self) -> BTreeMap<String, Vec<ChunkId>> {
        self.entries
            .read()
            .iter()
            .map(|(k, v)| (k.clone(), v.as_ref().clone()))
            .collect()
    }

    /// Persist the new list for `doc_id`, then publish it. Readers see either
    /// the old or the new list. On persistence failure nothing changes.
    pub fn update(&self, doc_id: &str, hashes: Vec<ChunkId>) -> Result<()> {
        self.replace_many(vec![(doc_id.to_owned(), Some(hashes))])
    }

    /// Apply several updates (`None` removes the entry) with one write.
    pub fn replace_many(&self, changes: Vec<(String, Option<Vec<ChunkId>>)>) -> Result<()> {
        let mut next = self.entries.read().clone();
        for (doc_id, hashes) in changes {
            match hashes {
                Some(h) => next.insert(doc_id, Arc::new(h)),
                None => next.remove(&doc_id),
            };
        }
        save_entries(&self.path, &next)?;
        *self.entries.write() = next;
        Ok(())
    }

    pub fn save(&self) -> Result<()> {
        let entries = self.entries.read().clone();
        save_entries(&self.path, &entries)
    }
}

fn parse_store(path: &Path, bytes: &[u8]) -> Result<Entries> {
    let raw: BTreeMap<String, Vec<String>> =
        serde_json::from_slice(bytes).map_err(|e| Error::HashStoreLoad {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    raw.into_iter()
        .map(|(doc, hashes)| {
            let ids = hashes
                .iter()
                .map(|h| ChunkId::parse(h))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::HashStoreLoad {
                    path: path.to_path_buf(),
                    reason: format!("document {doc:?}: {e}"),
                })?;
            Ok((doc, Arc::new(ids)))
        })
        .collect()
}

/// Write-temp, fsync, rename.
fn save_entries(path: &Path, entries: &Entries) -> Result<()> {
    let view: BTreeMap<&str, &[ChunkId]> =
        entries.iter().map(|(k, v)| (k.as_str(), v.as_slice())).collect();
    let json = serde_json::to_vec(&view).expect("hash store serializes");
    let tmp = path.with_extension("json.tmp");
    let write = || -> std::io::Result<()> {
        let mut f = File::create(&tmp)?;
        f.write_all(&json)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        if let Some(dir) = path.parent() {
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        Ok(())
    };
    write().map_err(|e| Error::io(path, e))
}
