//! Write-once, content-addressed response cache.
//!
//! Layout: `<root>/<first two hex digits>/<key>.json`.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Fields that identify a request. Serialized canonically and hashed.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CacheRequest {
    pub role: String,
    pub backend_kind: String,
    pub model_name: String,
    pub prompt: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub replicate_tag: String,
}

impl CacheRequest {
    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn key(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("cache request serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum CachedResponse {
    Text(String),
    Vector(Vec<f64>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RequestDigest {
    role: String,
    backend_kind: String,
    model_name: String,
    prompt_sha256: String,
    temperature: f64,
    seed: Option<u64>,
    replicate_tag: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    request: RequestDigest,
    response: CachedResponse,
    created_at: u64,
}

#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CachedResponse>> {
        let path = self.path_for(key);
        match fs::read(&path) {
            Ok(bytes) => {
                let entry: CacheEntry = serde_json::from_slice(&bytes)?;
                Ok(Some(entry.response))
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Store `response` unless the key is already present. Returns whatever
    /// value ends up stored, so concurrent writers converge on one value.
    pub fn put(&self, request: &CacheRequest, response: CachedResponse) -> Result<CachedResponse> {
        let key = request.key();
        let path = self.path_for(&key);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let entry = CacheEntry {
            key: key.clone(),
            request: RequestDigest {
                role: request.role.clone(),
                backend_kind: request.backend_kind.clone(),
                model_name: request.model_name.clone(),
                prompt_sha256: hex::encode(Sha256::digest(request.prompt.as_bytes())),
                temperature: request.temperature,
                seed: request.seed,
                replicate_tag: request.replicate_tag.clone(),
            },
            response,
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let tmp = dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&serde_json::to_vec_pretty(&entry)?)
                .and_then(|_| f.sync_all())
                .map_err(|e| Error::io(&tmp, e))?;
        }
        // hard_link fails if the target exists: exactly one writer wins.
        let linked = fs::hard_link(&tmp, &path);
        let _ = fs::remove_file(&tmp);
        match linked {
            Ok(()) => Ok(entry.response),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => self
                .get(&key)?
                .ok_or_else(|| Error::io(&path, io::Error::other("cache entry vanished"))),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(tag: &str) -> CacheRequest {
        CacheRequest {
            role: "chat".into(),
            backend_kind: "mock".into(),
            model_name: "m".into(),
            prompt: "hello".into(),
            temperature: 0.3,
            seed: None,
            replicate_tag: tag.into(),
        }
    }

    #[test]
    fn key_depends_on_every_field() {
        assert_ne!(req("r0").key(), req("r1").key());
        let mut other = req("r0");
        other.temperature = 0.7;
        assert_ne!(req("r0").key(), other.key());
        assert_eq!(req("r0").key().len(), 64);
    }

    #[test]
    fn write_once_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let r = req("r0");
        assert_eq!(cache.get(&r.key()).unwrap(), None);
        let first = cache.put(&r, CachedResponse::Text("a".into())).unwrap();
        let second = cache.put(&r, CachedResponse::Text("b".into())).unwrap();
        assert_eq!(first, CachedResponse::Text("a".into()));
        assert_eq!(second, first);
        assert_eq!(cache.get(&r.key()).unwrap(), Some(first));
        let key = r.key();
        assert!(dir.path().join(&key[..2]).join(format!("{key}.json")).exists());
    }

    #[test]
    fn concurrent_writers_converge() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let r = req("race");
        let results: Vec<CachedResponse> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..8)
                .map(|i| {
                    let (cache, r) = (&cache, &r);
                    s.spawn(move || cache.put(r, CachedResponse::Text(format!("v{i}"))).unwrap())
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(results.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(cache.get(&r.key()).unwrap().as_ref(), Some(&results[0]));
    }
}
