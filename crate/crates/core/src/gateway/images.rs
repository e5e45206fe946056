//! Content-addressed image references.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// SHA-256 digest of an image's bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImageDigest([u8; 32]);

impl ImageDigest {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

pub fn digest_bytes(bytes: &[u8]) -> ImageDigest {
    ImageDigest(Sha256::digest(bytes).into())
}

impl fmt::Debug for ImageDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ImageDigest({})", self.to_hex())
    }
}

impl fmt::Display for ImageDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for ImageDigest {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|e| format!("invalid image digest `{s}`: {e}"))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| format!("image digest `{s}` is not 32 bytes"))?;
        Ok(ImageDigest(arr))
    }
}

impl Serialize for ImageDigest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ImageDigest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Maps image digests to files on disk.
#[derive(Debug, Clone, Default)]
pub struct ImageStore {
    paths: HashMap<ImageDigest, PathBuf>,
}

impl ImageStore {
    pub fn new() -> Self {
        ImageStore::default()
    }

    /// Hash every regular file under `dir`, recursively.
    pub fn from_dir(dir: impl AsRef<Path>) -> io::Result<Self> {
        let mut store = ImageStore::new();
        let mut pending = vec![dir.as_ref().to_path_buf()];
        while let Some(dir) = pending.pop() {
            for entry in fs::read_dir(dir)? {
                let entry = entry?;
                let kind = entry.file_type()?;
                if kind.is_dir() {
                    pending.push(entry.path());
                } else if kind.is_file() {
                    store.add_file(entry.path())?;
                }
            }
        }
        Ok(store)
    }

    pub fn add_file(&mut self, path: impl Into<PathBuf>) -> io::Result<ImageDigest> {
        let path = path.into();
        let digest = digest_bytes(&fs::read(&path)?);
        self.paths.insert(digest, path);
        Ok(digest)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn read(&self, digest: &ImageDigest) -> io::Result<Vec<u8>> {
        if *digest == digest_bytes(b"") {
            return Ok(Vec::new());
        }
        let path = self
            .paths
            .get(digest)
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, digest.to_hex()))?;
        fs::read(path)
    }
}
