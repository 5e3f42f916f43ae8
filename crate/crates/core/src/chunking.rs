//! Paragraph-level chunking with content-addressable identities.
//!
//! A document is split at blank lines. Fenced code blocks, `|` tables and
//! bullet/numbered lists are kept whole even when they span blank lines.
//! Each chunk is identified by the SHA-256 of its normalized text, so the
//! same paragraph always gets the same id wherever it appears.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// 64-char lowercase hex SHA-256 digest of a chunk's normalized text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChunkId(String);

impl ChunkId {
    pub fn parse(hex_digest: &str) -> Result<Self> {
        let ok = hex_digest.len() == 64
            && hex_digest
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if ok {
            Ok(Self(hex_digest.to_owned()))
        } else {
            Err(Error::InvalidInput(format!(
                "not a lowercase SHA-256 hex digest: {hex_digest:?}"
            )))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First 12 hex characters, for display.
    pub fn short(&self) -> &str {
        &self.0[..12]
    }
}

impl fmt::Display for ChunkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    Paragraph,
    CodeBlock,
    Table,
    List,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    doc_id: String,
    text: String,
    source_path: Option<String>,
}

impl RawDocument {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let doc_id = doc_id.into();
        validate_doc_id(&doc_id)?;
        Ok(Self {
            doc_id,
            text: text.into(),
            source_path: None,
        })
    }

    pub fn with_source_path(mut self, path: impl Into<String>) -> Self {
        self.source_path = Some(path.into());
        self
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn source_path(&self) -> Option<&str> {
        self.source_path.as_deref()
    }
}

pub fn validate_doc_id(doc_id: &str) -> Result<()> {
    if doc_id.is_empty() {
        return Err(Error::InvalidInput("doc_id must not be empty".into()));
    }
    if doc_id.chars().any(char::is_control) {
        return Err(Error::InvalidInput(format!(
            "doc_id contains control characters: {doc_id:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: ChunkId,
    /// Original text, before normalization.
    pub content: String,
    pub normalized: String,
    /// Dense 0-based index within the document.
    pub position: u64,
    pub kind: ChunkKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LineClass {
    Blank,
    Fence,
    Table,
    ListItem,
    Text,
}

fn classify_line(line: &str) -> LineClass {
    let t = line.trim_start();
    if t.trim_end().is_empty() {
        LineClass::Blank
    } else if t.starts_with("```") {
        LineClass::Fence
    } else if t.starts_with('|') {
        LineClass::Table
    } else if is_list_marker(t) {
        LineClass::ListItem
    } else {
        LineClass::Text
    }
}

/// `-`, `*` or `N.` followed by whitespace or end of line.
fn is_list_marker(t: &str) -> bool {
    let rest = if let Some(r) = t.strip_prefix('-').or_else(|| t.strip_prefix('*')) {
        r
    } else {
        let digits = t.bytes().take_while(u8::is_ascii_digit).count();
        match t[digits..].strip_prefix('.') {
            Some(r) if digits > 0 => r,
            _ => return false,
        }
    };
    rest.is_empty() || rest.starts_with(char::is_whitespace)
}

/// Index of the next non-blank line at or after `from`.
fn next_non_blank(classes: &[LineClass], from: usize) -> Option<usize> {
    (from..classes.len()).find(|&i| classes[i] != LineClass::Blank)
}

/// Split text into ordered `(content, kind)` blocks.
pub fn split_document(text: &str) -> Vec<(String, ChunkKind)> {
    let lines: Vec<&str> = text
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect();
    let classes: Vec<LineClass> = lines.iter().map(|l| classify_line(l)).collect();
    let mut out = Vec::new();
    let mut i = 0;

    while i < lines.len() {
        let start = i;
        let kind = match classes[i] {
            LineClass::Blank => {
                i += 1;
                continue;
            }
            LineClass::Fence => {
                i += 1;
                while i < lines.len() && classes[i] != LineClass::Fence {
                    i += 1;
                }
                // Include the closing fence; an unclosed fence runs to the end.
                i = (i + 1).min(lines.len());
                ChunkKind::CodeBlock
            }
            LineClass::Table => {
                i = extend_block(&classes, i, |c| c == LineClass::Table, |c| c == LineClass::Table);
                ChunkKind::Table
            }
            LineClass::ListItem => {
                i = extend_block(
                    &classes,
                    i,
                    |c| c == LineClass::ListItem,
                    |c| matches!(c, LineClass::ListItem | LineClass::Text),
                );
                ChunkKind::List
            }
            LineClass::Text => {
                i += 1;
                while i < lines.len() && classes[i] == LineClass::Text {
                    i += 1;
                }
                ChunkKind::Paragraph
            }
        };
        let block = lines[start..i].join("\n");
        let trimmed = block.trim();
        if !trimmed.is_empty() {
            out.push((trimmed.to_owned(), kind));
        }
    }
    out
}

/// Extend a table/list block starting at `i`. Lines satisfying `cont` continue
/// the block directly; a blank gap continues it only if the next non-blank
/// line satisfies `resume`.
fn extend_block(
    classes: &[LineClass],
    mut i: usize,
    resume: impl Fn(LineClass) -> bool,
    cont: impl Fn(LineClass) -> bool,
) -> usize {
    i += 1;
    loop {
        while i < classes.len() && cont(classes[i]) {
            i += 1;
        }
        match next_non_blank(classes, i) {
            Some(j) if j > i && resume(classes[j]) => i = j,
            _ => return i,
        }
    }
}

/// NFC, then full Unicode case folding, then whitespace runs collapsed to a
/// single space and the ends trimmed.
pub fn normalize(content: &str) -> String {
    let nfc: String = content.nfc().collect();
    let folded = caseless::default_case_fold_str(&nfc);
    let mut out = String::with_capacity(folded.len());
    for word in folded.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

pub fn hash_chunk(normalized: &str) -> ChunkId {
    ChunkId(hex::encode(Sha256::digest(normalized.as_bytes())))
}

pub fn chunk_text(text: &str) -> Vec<Chunk> {
    split_document(text)
        .into_iter()
        .filter_map(|(content, kind)| {
            let normalized = normalize(&content);
            (!normalized.is_empty()).then_some((content, normalized, kind))
        })
        .enumerate()
        .map(|(i, (content, normalized, kind))| Chunk {
            chunk_id: hash_chunk(&normalized),
            content,
            normalized,
            position: i as u64,
            kind,
        })
        .collect()
}

pub fn chunk_document(doc: &RawDocument) -> Vec<Chunk> {
    chunk_text(doc.text())
}

/// Reads a source file into document text.
pub trait DocumentLoader: Send + Sync {
    fn supports(&self, path: &Path) -> bool;
    fn load(&self, path: &Path) -> Result<String>;
}

/// Plain text and Markdown are both read verbatim; Markdown structure is
/// handled by the chunker.
#[derive(Debug, Default, Clone, Copy)]
pub struct TextLoader;

impl DocumentLoader for TextLoader {
    fn supports(&self, path: &Path) -> bool {
        match path.extension().and_then(|e| e.to_str()) {
            None => true,
            Some(ext) => matches!(
                ext.to_ascii_lowercase().as_str(),
                "txt" | "text" | "md" | "markdown"
            ),
        }
    }

    fn load(&self, path: &Path) -> Result<String> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        String::from_utf8(bytes)
            .map_err(|e| Error::InvalidInput(format!("{} is not valid UTF-8: {e}", path.display())))
    }
}

pub fn load_document(path: &Path, doc_id: &str) -> Result<RawDocument> {
    load_document_with(&[&TextLoader], path, doc_id)
}

pub fn load_document_with(
    loaders: &[&dyn DocumentLoader],
    path: &Path,
    doc_id: &str,
) -> Result<RawDocument> {
    let loader = loaders
        .iter()
        .find(|l| l.supports(path))
        .ok_or_else(|| Error::InvalidInput(format!("no loader for {}", path.display())))?;
    Ok(RawDocument::new(doc_id, loader.load(path)?)?.with_source_path(path.display().to_string()))
}
