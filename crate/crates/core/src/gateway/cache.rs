//! Content-addressed record/replay cache.
//!
//! Keys are SHA-256 digests over a canonical, length-prefixed byte encoding of
//! the request, so they are stable across processes and platforms. The store
//! is an append-only JSONL file with one `{key, request, response, timestamp}`
//! record per line.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelRequest, ModelResponse};

const KEY_DOMAIN: &[u8] = b"taco.cache.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheMode {
    /// Serve hits from the cache, call the backend on a miss and store the result.
    #[default]
    Record,
    /// Serve only from the cache; a miss is an error and no backend is called.
    ReplayStrict,
    /// Bypass the cache entirely.
    Off,
}

impl std::str::FromStr for CacheMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "record" => Ok(CacheMode::Record),
            "replay_strict" => Ok(CacheMode::ReplayStrict),
            "off" => Ok(CacheMode::Off),
            other => Err(format!("unknown cache mode `{other}`")),
        }
    }
}

/// Hex-encoded SHA-256 digest identifying a request.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn put_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u64).to_be_bytes());
    buf.extend_from_slice(bytes);
}

fn put_optional(buf: &mut Vec<u8>, bytes: Option<&[u8]>) {
    match bytes {
        None => buf.push(0),
        Some(bytes) => {
            buf.push(1);
            put_bytes(buf, bytes);
        }
    }
}

/// Canonical byte encoding hashed by [`cache_key`]. Fields appear in a fixed
/// order, strings are length-prefixed, and the temperature is encoded by its
/// IEEE-754 bit pattern.
pub(crate) fn canonical_bytes(request: &ModelRequest) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + request.prompt.len());
    put_bytes(&mut buf, KEY_DOMAIN);
    put_bytes(&mut buf, request.backend_id.as_bytes());
    put_bytes(&mut buf, request.model_name.as_bytes());
    put_bytes(&mut buf, request.prompt.as_bytes());
    put_optional(&mut buf, request.image_ref.as_ref().map(|d| d.as_bytes()));
    // -0.0 and 0.0 are the same temperature
    let temperature = if request.temperature == 0.0 {
        0.0
    } else {
        request.temperature
    };
    buf.extend_from_slice(&temperature.to_bits().to_be_bytes());
    buf.extend_from_slice(&request.max_tokens.to_be_bytes());
    put_optional(&mut buf, request.seed.map(|s| s.to_be_bytes()).as_ref().map(|b| &b[..]));
    buf.push(request.want_probabilities as u8);
    buf
}

pub fn cache_key(request: &ModelRequest) -> CacheKey {
    CacheKey(hex::encode(Sha256::digest(canonical_bytes(request))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: CacheKey,
    pub request: ModelRequest,
    pub response: ModelResponse,
    pub timestamp: String,
}

struct Inner {
    entries: HashMap<CacheKey, ModelResponse>,
    writer: Option<File>,
}

/// JSONL-backed response cache, safe to share across threads.
pub struct ReplayCache {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl ReplayCache {
    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        ReplayCache {
            path: None,
            inner: Mutex::new(Inner {
                entries: HashMap::new(),
                writer: None,
            }),
        }
    }

    /// Open (or create) the cache file at `path`. A torn final line from an
    /// interrupted append is skipped with a warning.
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        let mut torn = false;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            let lines: Vec<String> = reader.lines().collect::<io::Result<_>>()?;
            let last = lines.len().saturating_sub(1);
            for (idx, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(line) {
                    Ok(record) => {
                        entries.insert(record.key, record.response);
                    }
                    Err(err) if idx == last => {
                        log::warn!("dropping torn final cache line in {}: {err}", path.display());
                        torn = true;
                    }
                    Err(err) => {
                        return Err(io::Error::new(
                            io::ErrorKind::InvalidData,
                            format!("{}:{}: {err}", path.display(), idx + 1),
                        ));
                    }
                }
            }
        } else if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let cache = ReplayCache {
            path: Some(path),
            inner: Mutex::new(Inner { entries, writer: None }),
        };
        if torn {
            // later appends must not be glued onto the partial line
            cache.compact()?;
        }
        Ok(cache)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<ModelResponse> {
        self.inner.lock().unwrap().entries.get(key).cloned()
    }

    /// Store a response. Each record is written as one complete line under
    /// the lock; existing keys are left untouched.
    pub fn insert(&self, key: CacheKey, request: &ModelRequest, response: &ModelResponse) -> io::Result<()> {
        let mut inner = self.inner.lock().unwrap();
        if inner.entries.contains_key(&key) {
            return Ok(());
        }
        if let Some(path) = &self.path {
            if inner.writer.is_none() {
                inner.writer = Some(OpenOptions::new().create(true).append(true).open(path)?);
            }
            let record = CacheRecord {
                key: key.clone(),
                request: request.clone(),
                response: response.clone(),
                timestamp: chrono::Utc::now().to_rfc3339(),
            };
            let mut line = serde_json::to_vec(&record).map_err(io::Error::other)?;
            line.push(b'\n');
            let writer = inner.writer.as_mut().expect("writer opened above");
            writer.write_all(&line)?;
            writer.flush()?;
        }
        inner.entries.insert(key, response.clone());
        Ok(())
    }

    /// Rewrite the file with one record per key, dropping torn lines.
    /// The new file is written beside the old one and renamed over it.
    pub fn compact(&self) -> io::Result<usize> {
        let Some(path) = &self.path else {
            return Ok(self.len());
        };
        let mut inner = self.inner.lock().unwrap();
        inner.writer = None;
        // the last record per key wins, as it does when the file is loaded
        let mut records: Vec<CacheRecord> = Vec::new();
        let mut slot: HashMap<CacheKey, usize> = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if let Ok(record) = serde_json::from_str::<CacheRecord>(&line) {
                    match slot.get(&record.key) {
                        Some(&i) => records[i] = record,
                        None => {
                            slot.insert(record.key.clone(), records.len());
                            records.push(record);
                        }
                    }
                }
            }
        }
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut out = io::BufWriter::new(File::create(&tmp)?);
            for record in &records {
                serde_json::to_writer(&mut out, record).map_err(io::Error::other)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
            out.get_ref().sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(records.len())
    }

    /// Read every well-formed record from a cache file.
    pub fn records(path: impl AsRef<Path>) -> io::Result<Vec<CacheRecord>> {
        let mut out = Vec::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if let Ok(record) = serde_json::from_str::<CacheRecord>(&line) {
                out.push(record);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::digest_bytes;

    fn request() -> ModelRequest {
        ModelRequest::text("mllm", "llava", "Is there a truck?")
            .with_image(digest_bytes(b"pixels"))
            .with_temperature(0.6)
            .with_max_tokens(1024)
            .with_seed(Some(7))
            .with_probabilities(true)
    }

    #[test]
    fn key_is_deterministic() {
        assert_eq!(cache_key(&request()), cache_key(&request()));
        assert_eq!(cache_key(&request()).as_str().len(), 64);
    }

    #[test]
    fn key_is_sensitive_to_every_field() {
        let base = cache_key(&request());
        let variants = [
            ModelRequest {
                backend_id: "x".into(),
                ..request()
            },
            ModelRequest {
                model_name: "x".into(),
                ..request()
            },
            ModelRequest {
                prompt: "Is there a truck? ".into(),
                ..request()
            },
            ModelRequest {
                image_ref: None,
                ..request()
            },
            ModelRequest {
                temperature: 0.0,
                ..request()
            },
            ModelRequest {
                max_tokens: 1000,
                ..request()
            },
            ModelRequest {
                seed: None,
                ..request()
            },
            ModelRequest {
                seed: Some(8),
                ..request()
            },
            ModelRequest {
                want_probabilities: false,
                ..request()
            },
        ];
        for variant in variants {
            assert_ne!(cache_key(&variant), base, "{variant:?}");
        }
    }

    #[test]
    fn whitespace_changes_the_canonical_bytes() {
        let a = ModelRequest::text("b", "m", "Is there a truck?");
        let b = ModelRequest::text("b", "m", "Is there a  truck?");
        let (ba, bb) = (canonical_bytes(&a), canonical_bytes(&b));
        assert_ne!(ba, bb);
        assert_eq!(bb.len(), ba.len() + 1);
        assert_ne!(cache_key(&a), cache_key(&b));
    }

    #[test]
    fn length_prefixing_prevents_field_boundary_collisions() {
        let a = ModelRequest {
            backend_id: "ab".into(),
            model_name: "c".into(),
            ..request()
        };
        let b = ModelRequest {
            backend_id: "a".into(),
            model_name: "bc".into(),
            ..request()
        };
        assert_ne!(cache_key(&a), cache_key(&b));
    }

    #[test]
    fn file_cache_persists_and_skips_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let response = ModelResponse::text("Yes");
        {
            let cache = ReplayCache::open(&path).unwrap();
            cache.insert(cache_key(&request()), &request(), &response).unwrap();
            // duplicate inserts are ignored
            cache.insert(cache_key(&request()), &request(), &response).unwrap();
        }
        let mut raw = fs::read_to_string(&path).unwrap();
        assert_eq!(raw.lines().count(), 1);
        raw.push_str("{\"key\": \"trunc");
        fs::write(&path, raw).unwrap();

        let cache = ReplayCache::open(&path).unwrap();
        assert_eq!(cache.get(&cache_key(&request())), Some(response));
        assert_eq!(cache.compact().unwrap(), 1);
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);
    }

    #[test]
    fn load_and_compact_agree_on_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let key = cache_key(&request());
        let line = |text: &str| {
            let record = CacheRecord {
                key: key.clone(),
                request: request(),
                response: ModelResponse::text(text),
                timestamp: String::new(),
            };
            serde_json::to_string(&record).unwrap() + "\n"
        };
        fs::write(&path, line("Yes") + &line("No")).unwrap();
        let cache = ReplayCache::open(&path).unwrap();
        assert_eq!(cache.get(&key).unwrap().text, "No");
        assert_eq!(cache.compact().unwrap(), 1);
        assert_eq!(ReplayCache::open(&path).unwrap().get(&key).unwrap().text, "No");
    }
}
