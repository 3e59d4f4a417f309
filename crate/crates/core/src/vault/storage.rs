//! Append-only record log.
//!
//! Layout: a sequence of `[u32 little-endian length][payload]` frames. The
//! first payload is `b'H'` followed by the JSON header (share parameters and
//! the sentinel ciphertext). Every later payload is `b'E'`, a 12-byte nonce
//! and an AES-256-GCM ciphertext of one log entry.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::VaultError;

pub const NONCE_LEN: usize = 12;
const HEADER_TAG: u8 = b'H';
const ENTRY_TAG: u8 = b'E';

pub trait Backend: Send + Sync {
    fn read_all(&self) -> io::Result<Vec<u8>>;
    fn append(&mut self, bytes: &[u8]) -> io::Result<()>;
}

/// File-backed log; every append is flushed to disk before returning.
#[derive(Debug)]
pub struct FileBackend {
    path: PathBuf,
    file: File,
}

impl FileBackend {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).read(true).open(&path)?;
        Ok(FileBackend { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Backend for FileBackend {
    fn read_all(&self) -> io::Result<Vec<u8>> {
        let mut bytes = Vec::new();
        File::open(&self.path)?.read_to_end(&mut bytes)?;
        Ok(bytes)
    }

    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.file.write_all(bytes)?;
        self.file.sync_data()
    }
}

/// In-memory log. Clones share the same buffer, so a test can keep one
/// handle to inspect raw bytes or to reopen a fresh vault over it.
#[derive(Debug, Clone, Default)]
pub struct MemoryBackend(Arc<Mutex<Vec<u8>>>);

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.0.lock().clone()
    }
}

impl Backend for MemoryBackend {
    fn read_all(&self) -> io::Result<Vec<u8>> {
        Ok(self.bytes())
    }

    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.0.lock().extend_from_slice(bytes);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub format: u32,
    pub shares: u8,
    pub threshold: u8,
    /// Hex of nonce followed by ciphertext of a fixed plaintext.
    pub sentinel: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sealed {
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
}

pub fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 4);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn header_frame(header: &Header) -> Vec<u8> {
    let mut payload = vec![HEADER_TAG];
    payload.extend(serde_json::to_vec(header).expect("header serializes"));
    frame(&payload)
}

pub fn entry_frame(entry: &Sealed) -> Vec<u8> {
    let mut payload = Vec::with_capacity(1 + NONCE_LEN + entry.ciphertext.len());
    payload.push(ENTRY_TAG);
    payload.extend_from_slice(&entry.nonce);
    payload.extend_from_slice(&entry.ciphertext);
    frame(&payload)
}

/// Splits raw log bytes into the header and encrypted entries. An empty log
/// yields `None`.
pub fn parse_log(bytes: &[u8]) -> Result<Option<(Header, Vec<Sealed>)>, VaultError> {
    let mut frames = Vec::new();
    let mut rest = bytes;
    while !rest.is_empty() {
        if rest.len() < 4 {
            return Err(VaultError::Corrupt("truncated frame length".into()));
        }
        let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        let body = rest
            .get(4..4 + len)
            .ok_or_else(|| VaultError::Corrupt("truncated frame".into()))?;
        frames.push(body);
        rest = &rest[4 + len..];
    }
    let Some((first, others)) = frames.split_first() else {
        return Ok(None);
    };
    let header = match first.split_first() {
        Some((&HEADER_TAG, json)) => serde_json::from_slice::<Header>(json)
            .map_err(|e| VaultError::Corrupt(format!("header: {e}")))?,
        _ => return Err(VaultError::Corrupt("missing header".into())),
    };
    let mut entries = Vec::with_capacity(others.len());
    for body in others {
        match body.split_first() {
            Some((&ENTRY_TAG, rest)) if rest.len() >= NONCE_LEN => entries.push(Sealed {
                nonce: rest[..NONCE_LEN].try_into().unwrap(),
                ciphertext: rest[NONCE_LEN..].to_vec(),
            }),
            _ => return Err(VaultError::Corrupt("malformed entry frame".into())),
        }
    }
    Ok(Some((header, entries)))
}

pub fn nonce_from_counter(counter: u128) -> [u8; NONCE_LEN] {
    assert!(counter < 1 << 96, "nonce space exhausted");
    counter.to_be_bytes()[4..].try_into().unwrap()
}

pub fn counter_from_nonce(nonce: &[u8; NONCE_LEN]) -> u128 {
    let mut wide = [0u8; 16];
    wide[4..].copy_from_slice(nonce);
    u128::from_be_bytes(wide)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_parse_back() {
        let header = Header { format: 1, shares: 5, threshold: 3, sentinel: "00".into() };
        let entry = Sealed { nonce: nonce_from_counter(7), ciphertext: vec![1, 2, 3] };
        let mut log = header_frame(&header);
        log.extend(entry_frame(&entry));
        let (h, entries) = parse_log(&log).unwrap().unwrap();
        assert_eq!(h, header);
        assert_eq!(entries, vec![entry]);
        assert!(parse_log(&[]).unwrap().is_none());
        assert!(parse_log(&log[..log.len() - 1]).is_err());
    }

    #[test]
    fn nonce_counter_round_trip() {
        for c in [0u128, 1, 255, 1 << 40, (1 << 96) - 1] {
            assert_eq!(counter_from_nonce(&nonce_from_counter(c)), c);
        }
    }
}
