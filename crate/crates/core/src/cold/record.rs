use serde::{Deserialize, Serialize};

use crate::chunking::ChunkId;
use crate::clock::TimestampMs;
use crate::embedding::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Active,
    Superseded,
    Deleted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeType {
    Insert,
    Update,
    Delete,
}

/// One version of a chunk at a document position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdRecord {
    pub chunk_id: ChunkId,
    pub embedding: Embedding,
    pub doc_id: String,
    pub position: u64,
    pub valid_from: TimestampMs,
    pub valid_to: Option<TimestampMs>,
    pub status: RecordStatus,
    pub content: String,
    /// 1 for a fresh lineage, parent + 1 for each update.
    pub version_number: u64,
    pub parent_hash: Option<ChunkId>,
    /// Position of the parent record. Differs from `position` when the
    /// update is a move.
    pub parent_position: Option<u64>,
    pub change_type: ChangeType,
}

impl ColdRecord {
    /// A first-version record, active from `valid_from`.
    pub fn inserted(
        chunk_id: ChunkId,
        embedding: Embedding,
        doc_id: impl Into<String>,
        position: u64,
        valid_from: TimestampMs,
        content: impl Into<String>,
    ) -> Self {
        Self {
            chunk_id,
            embedding,
            doc_id: doc_id.into(),
            position,
            valid_from,
            valid_to: None,
            status: RecordStatus::Active,
            content: content.into(),
            version_number: 1,
            parent_hash: None,
            parent_position: None,
            change_type: ChangeType::Insert,
        }
    }

    /// The successor of `parent`, active from `valid_from`.
    pub fn updated(
        parent: &ColdRecord,
        chunk_id: ChunkId,
        embedding: Embedding,
        position: u64,
        valid_from: TimestampMs,
        content: impl Into<String>,
    ) -> Self {
        Self {
            chunk_id,
            embedding,
            doc_id: parent.doc_id.clone(),
            position,
            valid_from,
            valid_to: None,
            status: RecordStatus::Active,
            content: content.into(),
            version_number: parent.version_number + 1,
            parent_hash: Some(parent.chunk_id.clone()),
            parent_position: Some(parent.position),
            change_type: ChangeType::Update,
        }
    }

    pub fn key(&self) -> (&str, u64) {
        (&self.doc_id, self.position)
    }

    /// Half-open validity check: `valid_from <= ts < valid_to`.
    pub fn valid_at(&self, ts: TimestampMs) -> bool {
        self.valid_from <= ts && self.valid_to.is_none_or(|end| ts < end)
    }

    pub fn is_move(&self) -> bool {
        self.change_type == ChangeType::Update && self.parent_position != Some(self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColdEvent {
    Insert(ColdRecord),
    Supersede {
        doc_id: String,
        position: u64,
        chunk_id: ChunkId,
        valid_to: TimestampMs,
    },
    Delete {
        doc_id: String,
        position: u64,
        chunk_id: ChunkId,
        valid_to: TimestampMs,
    },
}

impl ColdEvent {
    pub fn doc_id(&self) -> &str {
        match self {
            ColdEvent::Insert(r) => &r.doc_id,
            ColdEvent::Supersede { doc_id, .. } | ColdEvent::Delete { doc_id, .. } => doc_id,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunking::hash_chunk;

    #[test]
    fn half_open_bounds() {
        let mut r = ColdRecord::inserted(hash_chunk("x"), Embedding::basis(2), "d", 0, 10, "x");
        r.valid_to = Some(20);
        assert!(r.valid_at(10));
        assert!(r.valid_at(15));
        assert!(!r.valid_at(20));
        assert!(!r.valid_at(9));
        r.valid_to = None;
        assert!(r.valid_at(i64::MAX));
    }

    #[test]
    fn update_links_parent() {
        let p = ColdRecord::inserted(hash_chunk("a"), Embedding::basis(2), "d", 3, 10, "a");
        let u = ColdRecord::updated(&p, hash_chunk("b"), Embedding::basis(2), 3, 20, "b");
        assert_eq!(u.version_number, 2);
        assert_eq!(u.parent_hash, Some(p.chunk_id.clone()));
        assert!(!u.is_move());
        let m = ColdRecord::updated(&p, p.chunk_id.clone(), Embedding::basis(2), 1, 20, "a");
        assert!(m.is_move());
    }
}
