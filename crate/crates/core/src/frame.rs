//! CRC-framed append-only files, shared by the cold commit log and the WAL.
//!
//! ```text
//! +-------------+-------------------+-------------+
//! | len: u32 LE | payload (len B)   | crc: u32 LE |
//! +-------------+-------------------+-------------+
//! ```
//!
//! The payload starts with a one-byte format version followed by a CBOR
//! document. A short frame or CRC mismatch ends recovery at the last valid
//! frame; bytes after it were never acknowledged and are truncated when the
//! file is opened for writing.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const PAYLOAD_FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 4;
const TRAILER_LEN: usize = 4;

pub fn encode_frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + TRAILER_LEN);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out
}

pub fn encode_payload<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = vec![PAYLOAD_FORMAT_VERSION];
    ciborium::into_writer(value, &mut out).expect("CBOR encoding into a Vec cannot fail");
    out
}

pub fn decode_payload<T: DeserializeOwned>(path: &Path, offset: u64, payload: &[u8]) -> Result<T> {
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        offset,
        reason,
    };
    match payload.split_first() {
        Some((&PAYLOAD_FORMAT_VERSION, body)) => {
            ciborium::from_reader(body).map_err(|e| corrupt(format!("undecodable payload: {e}")))
        }
        Some((v, _)) => Err(corrupt(format!("unsupported payload format version {v}"))),
        None => Err(corrupt("empty payload".into())),
    }
}

/// A frame located in a scanned file.
#[derive(Debug, Clone, Copy)]
pub struct FrameRef {
    pub offset: u64,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug)]
pub struct Scan {
    pub frames: Vec<FrameRef>,
    /// Length of the valid prefix.
    pub valid_len: u64,
    /// Bytes past the valid prefix (torn or corrupt tail).
    pub discarded: u64,
}

pub fn scan(bytes: &[u8]) -> Scan {
    let mut frames = Vec::new();
    let mut pos = 0usize;
    while bytes.len() - pos >= HEADER_LEN {
        let len = u32::from_le_bytes(bytes[pos..pos + HEADER_LEN].try_into().unwrap()) as usize;
        let start = pos + HEADER_LEN;
        let Some(end) = start.checked_add(len) else { break };
        if end + TRAILER_LEN > bytes.len() {
            break;
        }
        let crc = u32::from_le_bytes(bytes[end..end + TRAILER_LEN].try_into().unwrap());
        if crc32fast::hash(&bytes[start..end]) != crc {
            break;
        }
        frames.push(FrameRef {
            offset: pos as u64,
            start,
            end,
        });
        pos = end + TRAILER_LEN;
    }
    Scan {
        frames,
        valid_len: pos as u64,
        discarded: (bytes.len() - pos) as u64,
    }
}

/// An append-only framed file.
#[derive(Debug)]
pub struct FrameFile {
    path: PathBuf,
    file: Option<File>,
    len: u64,
}

impl FrameFile {
    /// Read the whole file and scan its frames. With `writable`, the file is
    /// created if missing and any torn tail is truncated away.
    pub fn open(path: &Path, writable: bool) -> Result<(Self, Vec<u8>, Scan)> {
        let bytes = match File::open(path) {
            Ok(mut f) => {
                let mut buf = Vec::new();
                f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
                buf
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(path, e)),
        };
        let scan = scan(&bytes);
        let file = if writable {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            if scan.discarded > 0 {
                f.set_len(scan.valid_len).map_err(|e| Error::io(path, e))?;
                f.sync_all().map_err(|e| Error::io(path, e))?;
            }
            Some(f)
        } else {
            None
        };
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                len: scan.valid_len,
            },
            bytes,
            scan,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn file(&mut self) -> Result<&mut File> {
        self.file.as_mut().ok_or(Error::ReadOnly)
    }

    /// Append a frame and fsync. On failure the file is cut back to its previous length.
    pub fn append(&mut self, frame: &[u8]) -> Result<u64> {
        let offset = self.len;
        let path = self.path.clone();
        let file = self.file()?;
        let res = file.write_all(frame).and_then(|_| file.sync_data());
        if let Err(e) = res {
            let _ = file.set_len(offset);
            return Err(Error::io(path, e));
        }
        self.len += frame.len() as u64;
        Ok(offset)
    }

    /// Cut the file back to its last complete frame.
    pub fn discard_tail(&mut self) -> Result<()> {
        let (path, len) = (self.path.clone(), self.len);
        let file = self.file()?;
        file.set_len(len)
            .and_then(|_| file.sync_data())
            .map_err(|e| Error::io(path, e))
    }

    /// Write only a prefix of a frame, emulating a process killed mid-write.
    pub fn append_torn(&mut self, frame: &[u8], bytes: usize) -> Result<()> {
        let path = self.path.clone();
        let file = self.file()?;
        file.write_all(&frame[..bytes.min(frame.len())])
            .and_then(|_| file.sync_data())
            .map_err(|e| Error::io(path, e))
    }
}
