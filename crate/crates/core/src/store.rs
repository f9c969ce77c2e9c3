//! Embedded key-value persistence for experiments, structures, results and
//! pending tasks.
//!
//! Entities live in one file each under `<data-dir>/<kind>/`. Writes go to a
//! temporary file that is then renamed over the target, so a reader never
//! observes a torn entity and a write acknowledged before a crash survives it.
//! An in-memory backend with the same contract serves local runs and tests.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-entity size limit for uploaded structure files.
pub const MAX_STRUCTURE_BYTES: usize = 1_048_576;
const CAS_RETRIES: usize = 256;
const LOCK_STRIPES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    Experiment,
    Structure,
    Result,
    Task,
}

impl EntityKind {
    pub const ALL: [EntityKind; 4] = [
        EntityKind::Experiment,
        EntityKind::Structure,
        EntityKind::Result,
        EntityKind::Task,
    ];

    fn dir_name(self) -> &'static str {
        match self {
            EntityKind::Experiment => "experiments",
            EntityKind::Structure => "structures",
            EntityKind::Result => "results",
            EntityKind::Task => "tasks",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreOp {
    Put,
    Get,
    Delete,
    List,
    Update,
}

/// Returns `true` when the given operation should fail transiently.
pub type FaultHook = Arc<dyn Fn(StoreOp, EntityKind, &str) -> bool + Send + Sync>;

/// One page of a cursor scan. Pass `next_cursor` back to continue.
#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub entries: Vec<(String, Vec<u8>)>,
    pub next_cursor: Option<String>,
}

#[derive(Debug, Default)]
pub struct StoreStats {
    gets: [AtomicU64; 4],
    puts: [AtomicU64; 4],
}

impl StoreStats {
    pub fn gets(&self, kind: EntityKind) -> u64 {
        self.gets[kind.index()].load(Ordering::Relaxed)
    }

    pub fn puts(&self, kind: EntityKind) -> u64 {
        self.puts[kind.index()].load(Ordering::Relaxed)
    }
}

enum Backend {
    Memory(RwLock<BTreeMap<(EntityKind, String), Vec<u8>>>),
    Disk { root: PathBuf, tmp_seq: AtomicU64 },
}

pub struct Store {
    backend: Backend,
    stripes: Vec<Mutex<()>>,
    faults: RwLock<Option<FaultHook>>,
    stats: StoreStats,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.backend {
            Backend::Memory(_) => f.write_str("Store(memory)"),
            Backend::Disk { root, .. } => write!(f, "Store({})", root.display()),
        }
    }
}

fn validate_key(key: &str) -> Result<()> {
    if key.is_empty() || key.len() > 80 {
        return Err(Error::Invalid(format!("bad store key {key:?}")));
    }
    Ok(())
}

/// File-name-safe encoding: alphanumerics, `-` and `_` pass through, every
/// other byte becomes `%XX`.
fn encode_key(key: &str) -> String {
    let mut out = String::with_capacity(key.len());
    for b in key.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn decode_key(name: &str) -> Option<String> {
    let bytes = name.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = name.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

impl Store {
    /// Opens (creating if needed) a file-backed store rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for kind in EntityKind::ALL {
            fs::create_dir_all(root.join(kind.dir_name()))?;
        }
        fs::create_dir_all(root.join("tmp"))?;
        Ok(Self::with_backend(Backend::Disk {
            root,
            tmp_seq: AtomicU64::new(0),
        }))
    }

    pub fn in_memory() -> Self {
        Self::with_backend(Backend::Memory(RwLock::new(BTreeMap::new())))
    }

    fn with_backend(backend: Backend) -> Self {
        Self {
            backend,
            stripes: (0..LOCK_STRIPES).map(|_| Mutex::new(())).collect(),
            faults: RwLock::new(None),
            stats: StoreStats::default(),
        }
    }

    /// Installs (or clears) a fault-injection hook.
    pub fn set_fault_hook(&self, hook: Option<FaultHook>) {
        *self.faults.write().unwrap() = hook;
    }

    pub fn stats(&self) -> &StoreStats {
        &self.stats
    }

    fn check_fault(&self, op: StoreOp, kind: EntityKind, key: &str) -> Result<()> {
        if let Some(hook) = self.faults.read().unwrap().as_ref() {
            if hook(op, kind, key) {
                return Err(Error::Transient(format!("{op:?} {kind}/{key}")));
            }
        }
        Ok(())
    }

    fn path_of(root: &Path, kind: EntityKind, key: &str) -> PathBuf {
        root.join(kind.dir_name()).join(encode_key(key))
    }

    fn stripe(&self, kind: EntityKind, key: &str) -> &Mutex<()> {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        (kind, key).hash(&mut h);
        &self.stripes[(h.finish() as usize) % LOCK_STRIPES]
    }

    pub fn put(&self, kind: EntityKind, key: &str, body: &[u8]) -> Result<()> {
        validate_key(key)?;
        if kind == EntityKind::Structure && body.len() > MAX_STRUCTURE_BYTES {
            return Err(Error::EntityTooLarge {
                size: body.len(),
                limit: MAX_STRUCTURE_BYTES,
            });
        }
        self.check_fault(StoreOp::Put, kind, key)?;
        self.stats.puts[kind.index()].fetch_add(1, Ordering::Relaxed);
        self.raw_put(kind, key, body)
    }

    fn raw_put(&self, kind: EntityKind, key: &str, body: &[u8]) -> Result<()> {
        match &self.backend {
            Backend::Memory(map) => {
                map.write()
                    .unwrap()
                    .insert((kind, key.to_string()), body.to_vec());
                Ok(())
            }
            Backend::Disk { root, tmp_seq } => {
                let seq = tmp_seq.fetch_add(1, Ordering::Relaxed);
                let tmp = root
                    .join("tmp")
                    .join(format!("{}-{seq}", std::process::id()));
                fs::write(&tmp, body)?;
                fs::rename(&tmp, Self::path_of(root, kind, key))?;
                Ok(())
            }
        }
    }

    pub fn get(&self, kind: EntityKind, key: &str) -> Result<Vec<u8>> {
        validate_key(key)?;
        self.check_fault(StoreOp::Get, kind, key)?;
        self.stats.gets[kind.index()].fetch_add(1, Ordering::Relaxed);
        self.raw_get(kind, key)?
            .ok_or_else(|| Error::NotFound(format!("{kind}/{key}")))
    }

    fn raw_get(&self, kind: EntityKind, key: &str) -> Result<Option<Vec<u8>>> {
        match &self.backend {
            Backend::Memory(map) => Ok(map.read().unwrap().get(&(kind, key.to_string())).cloned()),
            Backend::Disk { root, .. } => match fs::read(Self::path_of(root, kind, key)) {
                Ok(b) => Ok(Some(b)),
                Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
                Err(e) => Err(e.into()),
            },
        }
    }

    pub fn contains(&self, kind: EntityKind, key: &str) -> Result<bool> {
        validate_key(key)?;
        self.check_fault(StoreOp::Get, kind, key)?;
        match &self.backend {
            Backend::Memory(map) => Ok(map.read().unwrap().contains_key(&(kind, key.to_string()))),
            Backend::Disk { root, .. } => Ok(Self::path_of(root, kind, key).exists()),
        }
    }

    /// Removes an entity. Returns whether it existed.
    pub fn delete(&self, kind: EntityKind, key: &str) -> Result<bool> {
        validate_key(key)?;
        self.check_fault(StoreOp::Delete, kind, key)?;
        match &self.backend {
            Backend::Memory(map) => Ok(map.write().unwrap().remove(&(kind, key.to_string())).is_some()),
            Backend::Disk { root, .. } => match fs::remove_file(Self::path_of(root, kind, key)) {
                Ok(()) => Ok(true),
                Err(e) if e.kind() == ErrorKind::NotFound => Ok(false),
                Err(e) => Err(e.into()),
            },
        }
    }

    /// All keys of `kind` starting with `prefix`, ascending.
    pub fn keys(&self, kind: EntityKind, prefix: &str) -> Result<Vec<String>> {
        self.check_fault(StoreOp::List, kind, prefix)?;
        self.raw_keys(kind, prefix)
    }

    fn raw_keys(&self, kind: EntityKind, prefix: &str) -> Result<Vec<String>> {
        match &self.backend {
            Backend::Memory(map) => Ok(map
                .read()
                .unwrap()
                .range((kind, prefix.to_string())..)
                .take_while(|((k, key), _)| *k == kind && key.starts_with(prefix))
                .map(|((_, key), _)| key.clone())
                .collect()),
            Backend::Disk { root, .. } => {
                let mut keys = Vec::new();
                for entry in fs::read_dir(root.join(kind.dir_name()))? {
                    let entry = entry?;
                    if let Some(key) = entry.file_name().to_str().and_then(decode_key) {
                        if key.starts_with(prefix) {
                            keys.push(key);
                        }
                    }
                }
                keys.sort();
                Ok(keys)
            }
        }
    }

    /// Cursor-paginated scan of `kind` restricted to keys starting with
    /// `prefix`. Pages are disjoint and together cover every key present for
    /// the whole scan.
    pub fn list_by_kind(
        &self,
        kind: EntityKind,
        prefix: &str,
        cursor: Option<&str>,
        page_size: usize,
    ) -> Result<Page> {
        if page_size == 0 {
            return Err(Error::Invalid("page size must be positive".into()));
        }
        self.check_fault(StoreOp::List, kind, prefix)?;
        let keys = self.raw_keys(kind, prefix)?;
        let start = match cursor {
            None => 0,
            Some(c) => keys.partition_point(|k| k.as_str() <= c),
        };
        let end = (start + page_size).min(keys.len());
        let mut entries = Vec::with_capacity(end - start);
        for key in &keys[start..end] {
            // deleted between listing and reading: skip
            if let Some(body) = self.raw_get(kind, key)? {
                entries.push((key.clone(), body));
            }
        }
        let next_cursor = (end < keys.len()).then(|| keys[end - 1].clone());
        Ok(Page {
            entries,
            next_cursor,
        })
    }

    /// Atomically replaces the entity with `mutation(current)`.
    ///
    /// Optimistic: the mutation runs without holding a lock and the write only
    /// lands if nobody changed the entity in between; otherwise it is retried.
    /// `mutation` may therefore run more than once and must not have side
    /// effects. An `Err` from `mutation` aborts the update.
    pub fn update_atomic<F>(&self, kind: EntityKind, key: &str, mut mutation: F) -> Result<Vec<u8>>
    where
        F: FnMut(&[u8]) -> Result<Vec<u8>>,
    {
        validate_key(key)?;
        self.check_fault(StoreOp::Update, kind, key)?;
        for _ in 0..CAS_RETRIES {
            let current = self
                .raw_get(kind, key)?
                .ok_or_else(|| Error::NotFound(format!("{kind}/{key}")))?;
            let next = mutation(&current)?;
            let _guard = self.stripe(kind, key).lock().unwrap();
            match self.raw_get(kind, key)? {
                Some(now) if now == current => {
                    self.raw_put(kind, key, &next)?;
                    self.stats.puts[kind.index()].fetch_add(1, Ordering::Relaxed);
                    return Ok(next);
                }
                Some(_) => {}
                None => return Err(Error::NotFound(format!("{kind}/{key}"))),
            }
            drop(_guard);
            std::thread::yield_now();
        }
        Err(Error::ConflictRetryExhausted(format!("{kind}/{key}")))
    }

    pub fn put_json<T: Serialize>(&self, kind: EntityKind, key: &str, value: &T) -> Result<()> {
        self.put(kind, key, &serde_json::to_vec(value)?)
    }

    pub fn get_json<T: DeserializeOwned>(&self, kind: EntityKind, key: &str) -> Result<T> {
        Ok(serde_json::from_slice(&self.get(kind, key)?)?)
    }

    pub fn update_json<T, F>(&self, kind: EntityKind, key: &str, mut mutation: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnMut(T) -> Result<T>,
    {
        let bytes = self.update_atomic(kind, key, |cur| {
            let value: T = serde_json::from_slice(cur)?;
            Ok(serde_json::to_vec(&mutation(value)?)?)
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
