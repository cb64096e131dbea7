//! Append-only on-disk store of prompt embeddings.
//!
//! File layout (little endian):
//! header `b"PSPC"` + `u16` version, then entries of
//! `key_len u32 | key | meta_len u32 | meta json | dim u32 | dim × f32 | crc32 u32`
//! where the CRC covers every preceding byte of the entry. Later entries
//! with the same key win. Entries with a bad CRC are skipped; a torn tail
//! (partial final entry) is cut off when the file is opened.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::backend::{cache_key, encode_prompt, EncoderBackend, PromptEmbedding};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"PSPC";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 6;

#[derive(Serialize, Deserialize)]
struct Meta {
    backend_id: String,
    source_text: String,
}

pub struct PromptCache {
    path: PathBuf,
    entries: RwLock<HashMap<String, PromptEmbedding>>,
    file: Mutex<File>,
    issues: Vec<String>,
}

fn encode_entry(key: &str, emb: &PromptEmbedding) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&Meta {
        backend_id: emb.backend_id.clone(),
        source_text: emb.source_text.clone(),
    })
    .map_err(|e| Error::Invalid(format!("serializing cache metadata: {e}")))?;
    let mut buf = Vec::with_capacity(16 + key.len() + meta.len() + 4 * emb.vector.len());
    buf.extend((key.len() as u32).to_le_bytes());
    buf.extend(key.as_bytes());
    buf.extend((meta.len() as u32).to_le_bytes());
    buf.extend(&meta);
    buf.extend((emb.vector.len() as u32).to_le_bytes());
    for v in &emb.vector {
        buf.extend(v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend(crc.to_le_bytes());
    Ok(buf)
}

enum Parsed {
    Entry(String, PromptEmbedding, usize),
    BadCrc(usize),
    Torn,
}

fn read_u32(bytes: &[u8], at: usize) -> Option<usize> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
}

fn parse_entry(bytes: &[u8]) -> Parsed {
    let mut at = 0;
    let Some(key_len) = read_u32(bytes, at) else { return Parsed::Torn };
    at += 4 + key_len;
    let Some(meta_len) = read_u32(bytes, at) else { return Parsed::Torn };
    let meta_at = at + 4;
    at = meta_at + meta_len;
    let Some(dim) = read_u32(bytes, at) else { return Parsed::Torn };
    let data_at = at + 4;
    let Some(crc_at) = dim.checked_mul(4).map(|n| data_at + n) else { return Parsed::Torn };
    let Some(stored) = read_u32(bytes, crc_at) else { return Parsed::Torn };
    let total = crc_at + 4;
    if crc32fast::hash(&bytes[..crc_at]) as usize != stored {
        return Parsed::BadCrc(total);
    }
    let key = String::from_utf8_lossy(&bytes[4..4 + key_len]).into_owned();
    let Ok(meta) = serde_json::from_slice::<Meta>(&bytes[meta_at..meta_at + meta_len]) else {
        return Parsed::BadCrc(total);
    };
    let vector = bytes[data_at..crc_at]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Parsed::Entry(
        key,
        PromptEmbedding {
            vector,
            source_text: meta.source_text,
            backend_id: meta.backend_id,
        },
        total,
    )
}

impl PromptCache {
    /// Opens (or creates) the cache file and loads every valid entry.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(&path, e))?;
        let mut issues = Vec::new();
        let mut entries = HashMap::new();
        if bytes.is_empty() {
            let mut header = MAGIC.to_vec();
            header.extend(VERSION.to_le_bytes());
            file.write_all(&header).map_err(|e| Error::io(&path, e))?;
        } else {
            if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
                return Err(Error::CorruptCache {
                    path: path.clone(),
                    reason: "missing PSPC header".into(),
                });
            }
            let version = u16::from_le_bytes([bytes[4], bytes[5]]);
            if version != VERSION {
                return Err(Error::CorruptCache {
                    path: path.clone(),
                    reason: format!("unsupported version {version}"),
                });
            }
            let mut at = HEADER_LEN;
            let mut index = 0usize;
            while at < bytes.len() {
                match parse_entry(&bytes[at..]) {
                    Parsed::Entry(key, emb, n) => {
                        entries.insert(key, emb);
                        at += n;
                    }
                    Parsed::BadCrc(n) => {
                        let msg = format!("entry {index} at byte {at} failed its checksum and was skipped");
                        log::warn!("{}: {msg}", path.display());
                        issues.push(msg);
                        at += n;
                    }
                    Parsed::Torn => {
                        let msg = format!("truncated entry at byte {at} removed ({} bytes)", bytes.len() - at);
                        log::warn!("{}: {msg}", path.display());
                        issues.push(msg);
                        file.set_len(at as u64).map_err(|e| Error::io(&path, e))?;
                        file.seek(SeekFrom::End(0)).map_err(|e| Error::io(&path, e))?;
                        break;
                    }
                }
                index += 1;
            }
        }
        Ok(Self {
            path,
            entries: RwLock::new(entries),
            file: Mutex::new(file),
            issues,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Problems found while loading (skipped or truncated entries).
    pub fn issues(&self) -> &[String] {
        &self.issues
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<PromptEmbedding> {
        self.entries.read().unwrap().get(key).cloned()
    }

    /// Strict lookup used at inference time.
    pub fn require(&self, key: &str) -> Result<PromptEmbedding> {
        self.get(key).ok_or_else(|| Error::CacheMiss(key.to_string()))
    }

    pub fn insert(&self, key: &str, emb: &PromptEmbedding) -> Result<()> {
        let buf = encode_entry(key, emb)?;
        {
            let mut f = self.file.lock().unwrap();
            f.write_all(&buf).map_err(|e| Error::io(&self.path, e))?;
            f.flush().map_err(|e| Error::io(&self.path, e))?;
        }
        self.entries.write().unwrap().insert(key.to_string(), emb.clone());
        Ok(())
    }

    /// Cached embedding of `text`, encoding and appending on a miss.
    /// Returns the key and whether the entry was already present.
    pub fn get_or_encode(&self, text: &str, backend: &dyn EncoderBackend) -> Result<(String, PromptEmbedding, bool)> {
        let key = cache_key(&backend.id(), text);
        if let Some(emb) = self.get(&key) {
            return Ok((key, emb, true));
        }
        let emb = encode_prompt(text, backend)?;
        self.insert(&key, &emb)?;
        Ok((key, emb, false))
    }

    pub fn sync(&self) -> Result<()> {
        self.file.lock().unwrap().sync_all().map_err(|e| Error::io(&self.path, e))
    }
}
