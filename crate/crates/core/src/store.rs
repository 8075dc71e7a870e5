//! Content-addressed blob store shared by every party of a run.
//!
//! Blobs are addressed by their Keccak-256 digest and never change once
//! written. The store is readable by everyone; anything confidential must be
//! encrypted before it gets here.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::cryptokit::keccak256;
use crate::error::{Error, Result};

pub const INDEX_FILE: &str = "store_index.jsonl";

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentId(pub [u8; 32]);

impl ContentId {
    pub fn of(content: &[u8]) -> Self {
        Self(keccak256(content))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim()).map_err(|e| Error::Input(format!("bad cid hex: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Input("cid must be 32 bytes".into()))?;
        Ok(Self(arr))
    }
}

impl std::fmt::Display for ContentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl std::fmt::Debug for ContentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ContentId({})", self.to_hex())
    }
}

impl Serialize for ContentId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ContentId::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone)]
pub struct StoredBlob {
    pub content: Arc<[u8]>,
    /// Logical tick of the first put.
    pub created_at: u64,
}

#[derive(Serialize, Deserialize)]
struct IndexRecord {
    cid: ContentId,
    size: usize,
}

#[derive(Default)]
struct Inner {
    blobs: BTreeMap<ContentId, StoredBlob>,
    tick: u64,
}

#[derive(Default)]
pub struct Store {
    inner: RwLock<Inner>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores `content` and returns its digest. Re-putting identical content
    /// is a no-op that returns the same id.
    pub fn put(&self, content: &[u8]) -> Result<ContentId> {
        if content.is_empty() {
            return Err(Error::Input("cannot store empty content".into()));
        }
        let cid = ContentId::of(content);
        let mut inner = self.inner.write().expect("store lock poisoned");
        if !inner.blobs.contains_key(&cid) {
            let created_at = inner.tick;
            inner.tick += 1;
            inner.blobs.insert(
                cid,
                StoredBlob {
                    content: Arc::from(content),
                    created_at,
                },
            );
        }
        Ok(cid)
    }

    pub fn get(&self, cid: &ContentId) -> Result<Arc<[u8]>> {
        self.inner
            .read()
            .expect("store lock poisoned")
            .blobs
            .get(cid)
            .map(|b| b.content.clone())
            .ok_or_else(|| Error::NotFound(format!("blob {cid}")))
    }

    pub fn contains(&self, cid: &ContentId) -> bool {
        self.inner.read().expect("store lock poisoned").blobs.contains_key(cid)
    }

    pub fn len(&self) -> usize {
        self.inner.read().expect("store lock poisoned").blobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All blobs in content-id order.
    pub fn entries(&self) -> Vec<(ContentId, StoredBlob)> {
        self.inner
            .read()
            .expect("store lock poisoned")
            .blobs
            .iter()
            .map(|(k, v)| (*k, v.clone()))
            .collect()
    }

    /// Writes one file per blob (named by hex digest) plus the index.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut index = BufWriter::new(fs::File::create(dir.join(INDEX_FILE))?);
        for (cid, blob) in self.entries() {
            fs::write(dir.join(cid.to_hex()), &blob.content)?;
            serde_json::to_writer(
                &mut index,
                &IndexRecord {
                    cid,
                    size: blob.content.len(),
                },
            )?;
            index.write_all(b"\n")?;
        }
        index.flush()?;
        Ok(())
    }

    /// Loads a persisted store, checking every blob against its name and size.
    pub fn load(dir: &Path) -> Result<Self> {
        let store = Store::new();
        let index = BufReader::new(fs::File::open(dir.join(INDEX_FILE))?);
        for line in index.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: IndexRecord = serde_json::from_str(&line)?;
            let content = fs::read(dir.join(rec.cid.to_hex()))?;
            if content.len() != rec.size || ContentId::of(&content) != rec.cid {
                return Err(Error::Integrity(format!("blob {} does not match its index entry", rec.cid)));
            }
            store.put(&content)?;
        }
        Ok(store)
    }
}
