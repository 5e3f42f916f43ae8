//! On-disk layout of the hot tier.
//!
//! `records.bin` holds a 16-byte header (`TVHR`, format version, generation)
//! followed by CRC frames, one record each:
//!
//! ```text
//! chunk_id[64] | doc_len u32 | doc | position u64 | valid_from i64
//!              | content_len u32 | content | dim u32 | dim x f32 LE
//! ```
//!
//! `tombstones.bin` has the same header shape (`TVHT`) followed by raw u64 LE
//! slot indices. Compaction writes both files under a new generation; a
//! tombstone file whose generation lags the records file predates the
//! rewrite and is ignored.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::chunking::ChunkId;
use crate::clock::TimestampMs;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::frame::{encode_frame, scan};

const RECORDS_MAGIC: &[u8; 4] = b"TVHR";
const TOMBSTONES_MAGIC: &[u8; 4] = b"TVHT";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub const RECORDS_FILE: &str = "records.bin";
pub const TOMBSTONES_FILE: &str = "tombstones.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct HotRecord {
    pub chunk_id: ChunkId,
    pub doc_id: String,
    pub position: u64,
    pub valid_from: TimestampMs,
    pub content: String,
    pub embedding: Embedding,
}

impl HotRecord {
    /// Hot records are active by definition.
    pub fn status(&self) -> &'static str {
        "active"
    }

    pub fn key(&self) -> (&str, u64) {
        (&self.doc_id, self.position)
    }
}

pub(crate) fn encode_record(r: &HotRecord) -> Vec<u8> {
    let vals = r.embedding.as_slice();
    let mut out =
        Vec::with_capacity(64 + 24 + r.doc_id.len() + r.content.len() + 4 * vals.len() + 12);
    out.extend_from_slice(r.chunk_id.as_str().as_bytes());
    out.extend_from_slice(&(r.doc_id.len() as u32).to_le_bytes());
    out.extend_from_slice(r.doc_id.as_bytes());
    out.extend_from_slice(&r.position.to_le_bytes());
    out.extend_from_slice(&r.valid_from.to_le_bytes());
    out.extend_from_slice(&(r.content.len() as u32).to_le_bytes());
    out.extend_from_slice(r.content.as_bytes());
    out.extend_from_slice(&(vals.len() as u32).to_le_bytes());
    out.extend_from_slice(&r.embedding.to_le_bytes());
    out
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.0.len() < n {
            return Err(format!("record truncated: wanted {n} bytes, {} left", self.0.len()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

pub(crate) fn decode_record(bytes: &[u8]) -> std::result::Result<HotRecord, String> {
    let mut c = Cursor(bytes);
    let id = std::str::from_utf8(c.take(64)?).map_err(|e| e.to_string())?;
    let chunk_id = ChunkId::parse(id).map_err(|e| e.to_string())?;
    let doc_id = c.string()?;
    let position = c.u64()?;
    let valid_from = c.u64()? as i64;
    let content = c.string()?;
    let dim = c.u32()? as usize;
    let embedding = Embedding::from_le_bytes(c.take(dim * 4)?).map_err(|e| e.to_string())?;
    if !c.0.is_empty() {
        return Err(format!("{} trailing bytes after record", c.0.len()));
    }
    Ok(HotRecord {
        chunk_id,
        doc_id,
        position,
        valid_from,
        content,
        embedding,
    })
}

fn header(magic: &[u8; 4], generation: u64) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..4].copy_from_slice(magic);
    h[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    h[8..].copy_from_slice(&generation.to_le_bytes());
    h
}

/// `Ok(None)` for a file too short to hold a header (never finished creating).
fn parse_header(path: &Path, magic: &[u8; 4], bytes: &[u8]) -> Result<Option<u64>> {
    if bytes.len() < HEADER_LEN {
        return Ok(None);
    }
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        offset: 0,
        reason,
    };
    if &bytes[..4] != magic {
        return Err(corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported format version {version}")));
    }
    Ok(Some(u64::from_le_bytes(bytes[8..16].try_into().unwrap())))
}

fn read_optional(path: &Path) -> Result<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir)
        .and_then(|d| d.sync_all())
        .map_err(|e| Error::io(dir, e))
}

/// Write `header + body` to `path` via a temp file and rename.
fn install(dir: &Path, name: &str, magic: &[u8; 4], generation: u64, body: &[u8]) -> Result<()> {
    let tmp = dir.join(format!("{name}.tmp"));
    let dst = dir.join(name);
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&header(magic, generation))
        .and_then(|_| f.write_all(body))
        .and_then(|_| f.sync_all())
        .map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
    sync_dir(dir)
}

#[derive(Debug, Default)]
pub(crate) struct Loaded {
    pub records: Vec<HotRecord>,
    pub tombstones: Vec<u64>,
    pub generation: u64,
}

/// Append handles on the two hot-tier files.
#[derive(Debug)]
pub(crate) struct HotFiles {
    dir: PathBuf,
    records: File,
    tombstones: File,
    records_len: u64,
    tombstones_len: u64,
    generation: u64,
}

pub(crate) fn load(dir: &Path) -> Result<Loaded> {
    let rpath = dir.join(RECORDS_FILE);
    let rbytes = read_optional(&rpath)?;
    let Some(generation) = parse_header(&rpath, RECORDS_MAGIC, &rbytes)? else {
        return Ok(Loaded::default());
    };
    let body = &rbytes[HEADER_LEN..];
    let s = scan(body);
    let mut records = Vec::with_capacity(s.frames.len());
    for f in &s.frames {
        let rec = decode_record(&body[f.start..f.end]).map_err(|reason| Error::Corrupt {
            path: rpath.clone(),
            offset: HEADER_LEN as u64 + f.offset,
            reason,
        })?;
        records.push(rec);
    }

    let tpath = dir.join(TOMBSTONES_FILE);
    let tbytes = read_optional(&tpath)?;
    let mut tombstones = Vec::new();
    if parse_header(&tpath, TOMBSTONES_MAGIC, &tbytes)? == Some(generation) {
        for c in tbytes[HEADER_LEN..].chunks_exact(8) {
            let slot = u64::from_le_bytes(c.try_into().unwrap());
            if (slot as usize) < records.len() {
                tombstones.push(slot);
            }
        }
    }
    Ok(Loaded {
        records,
        tombstones,
        generation,
    })
}

impl HotFiles {
    /// Open for appending, repairing whatever a crash left behind: torn
    /// frames are cut, a missing or stale tombstone file is recreated.
    pub fn open(dir: &Path) -> Result<(Self, Loaded)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rpath = dir.join(RECORDS_FILE);
        let rbytes = read_optional(&rpath)?;
        if parse_header(&rpath, RECORDS_MAGIC, &rbytes)?.is_none() {
            install(dir, RECORDS_FILE, RECORDS_MAGIC, 0, &[])?;
            install(dir, TOMBSTONES_FILE, TOMBSTONES_MAGIC, 0, &[])?;
        }
        let loaded = load(dir)?;
        let rbytes = read_optional(&rpath)?;
        let records_len = HEADER_LEN as u64 + scan(&rbytes[HEADER_LEN..]).valid_len;

        let tpath = dir.join(TOMBSTONES_FILE);
        let tbytes = read_optional(&tpath)?;
        if parse_header(&tpath, TOMBSTONES_MAGIC, &tbytes)? != Some(loaded.generation) {
            install(dir, TOMBSTONES_FILE, TOMBSTONES_MAGIC, loaded.generation, &[])?;
        }
        let tlen = read_optional(&tpath)?.len() as u64;
        let tombstones_len = HEADER_LEN as u64 + (tlen - HEADER_LEN as u64) / 8 * 8;

        let records = open_append(&rpath, records_len)?;
        let tombstones = open_append(&tpath, tombstones_len)?;
        Ok((
            Self {
                dir: dir.to_path_buf(),
                records,
                tombstones,
                records_len,
                tombstones_len,
                generation: loaded.generation,
            },
            loaded,
        ))
    }

    pub fn append_records(&mut self, recs: &[HotRecord]) -> Result<()> {
        let buf: Vec<u8> = recs
            .iter()
            .flat_map(|r| encode_frame(&encode_record(r)))
            .collect();
        append(&self.dir.join(RECORDS_FILE), &mut self.records, &mut self.records_len, &buf)
    }

    pub fn append_tombstones(&mut self, slots: &[u64]) -> Result<()> {
        let buf: Vec<u8> = slots.iter().flat_map(|s| s.to_le_bytes()).collect();
        append(
            &self.dir.join(TOMBSTONES_FILE),
            &mut self.tombstones,
            &mut self.tombstones_len,
            &buf,
        )
    }

    /// Replace both files with `live` under the next generation.
    pub fn rewrite(&mut self, live: &[HotRecord]) -> Result<()> {
        let generation = self.generation + 1;
        let body: Vec<u8> = live
            .iter()
            .flat_map(|r| encode_frame(&encode_record(r)))
            .collect();
        install(&self.dir, RECORDS_FILE, RECORDS_MAGIC, generation, &body)?;
        install(&self.dir, TOMBSTONES_FILE, TOMBSTONES_MAGIC, generation, &[])?;
        let rpath = self.dir.join(RECORDS_FILE);
        let tpath = self.dir.join(TOMBSTONES_FILE);
        self.records_len = (HEADER_LEN + body.len()) as u64;
        self.tombstones_len = HEADER_LEN as u64;
        self.records = open_append(&rpath, self.records_len)?;
        self.tombstones = open_append(&tpath, self.tombstones_len)?;
        self.generation = generation;
        Ok(())
    }
}

fn open_append(path: &Path, valid_len: u64) -> Result<File> {
    let f = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let actual = f.metadata().map_err(|e| Error::io(path, e))?.len();
    if actual != valid_len {
        f.set_len(valid_len).map_err(|e| Error::io(path, e))?;
        f.sync_all().map_err(|e| Error::io(path, e))?;
    }
    Ok(f)
}

fn append(path: &Path, file: &mut File, len: &mut u64, buf: &[u8]) -> Result<()> {
    if buf.is_empty() {
        return Ok(());
    }
    if let Err(e) = file.write_all(buf).and_then(|_| file.sync_data()) {
        let _ = file.set_len(*len);
        return Err(Error::io(path, e));
    }
    *len += buf.len() as u64;
    Ok(())
}
