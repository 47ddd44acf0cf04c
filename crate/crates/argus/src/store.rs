//! Snapshot store: an in-memory committed map with an optional on-disk
//! append-only log behind it.
//!
//! Disk layout: `snapshots.log` holds length-prefixed JSON entries
//! (`u32` little-endian byte length, then the serialized snapshot);
//! `snapshots.idx` holds one tab-separated line per entry:
//! `node <tab> epoch <tab> attempt <tab> offset <tab> len`. The index is
//! derived data; the log alone is sufficient to rebuild it. Pruning
//! compacts by rewriting both files through a temporary path and renaming
//! over the originals.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::snapshot::{Snapshot, SnapshotKey};

/// Report from one prune pass.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PruneReport {
    pub retained: Vec<SnapshotKey>,
    pub dropped: Vec<SnapshotKey>,
    pub log_bytes: Option<u64>,
}

struct DiskLog {
    log_path: PathBuf,
    idx_path: PathBuf,
    log: File,
    idx: File,
    offset: u64,
}

impl DiskLog {
    fn append(&mut self, key: &SnapshotKey, bytes: &[u8]) -> Result<()> {
        let len = u32::try_from(bytes.len())
            .map_err(|_| Error::Store("snapshot entry over 4 GiB".to_string()))?;
        self.log.write_all(&len.to_le_bytes())?;
        self.log.write_all(bytes)?;
        self.log.flush()?;
        // Offset points at the length prefix; len counts the payload only.
        writeln!(
            self.idx,
            "{}\t{}\t{}\t{}\t{}",
            key.node, key.epoch.0, key.attempt, self.offset, len
        )?;
        self.idx.flush()?;
        self.offset += 4 + u64::from(len);
        Ok(())
    }
}

struct Inner {
    entries: BTreeMap<SnapshotKey, (u64, Snapshot)>,
    next_seq: u64,
    disk: Option<DiskLog>,
}

/// Committed-read store: `get` only ever observes fully written entries,
/// and a `put` in flight on another task is invisible until it returns.
pub struct SnapshotStore {
    inner: Mutex<Inner>,
}

impl SnapshotStore {
    pub fn in_memory() -> SnapshotStore {
        SnapshotStore {
            inner: Mutex::new(Inner {
                entries: BTreeMap::new(),
                next_seq: 0,
                disk: None,
            }),
        }
    }

    /// Open (or create) a disk-backed store in `dir`. Existing entries are
    /// replayed from the index in append order.
    pub fn open(dir: &Path) -> Result<SnapshotStore> {
        std::fs::create_dir_all(dir)?;
        let log_path = dir.join("snapshots.log");
        let idx_path = dir.join("snapshots.idx");

        let mut entries = BTreeMap::new();
        let mut next_seq = 0u64;
        if idx_path.exists() {
            let mut log = File::open(&log_path)?;
            for line in std::fs::read_to_string(&idx_path)?.lines() {
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 5 {
                    return Err(Error::Store(format!("malformed index line: {line:?}")));
                }
                let offset: u64 = fields[3]
                    .parse()
                    .map_err(|_| Error::Store(format!("bad offset in {line:?}")))?;
                let len: usize = fields[4]
                    .parse()
                    .map_err(|_| Error::Store(format!("bad length in {line:?}")))?;
                log.seek(SeekFrom::Start(offset + 4))?;
                let mut buf = vec![0u8; len];
                log.read_exact(&mut buf)?;
                let snap: Snapshot = serde_json::from_slice(&buf)?;
                entries.insert(snap.key(), (next_seq, snap));
                next_seq += 1;
            }
        }

        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        let idx = OpenOptions::new().create(true).append(true).open(&idx_path)?;
        let offset = log.metadata()?.len();

        Ok(SnapshotStore {
            inner: Mutex::new(Inner {
                entries,
                next_seq,
                disk: Some(DiskLog { log_path, idx_path, log, idx, offset }),
            }),
        })
    }

    /// Insert a snapshot. The (node, epoch, attempt) key must be fresh;
    /// a duplicate put is a caller bug and is rejected.
    pub fn put(&self, snapshot: Snapshot) -> Result<()> {
        let key = snapshot.key();
        let mut inner = self.inner.lock().expect("store lock");
        if inner.entries.contains_key(&key) {
            return Err(Error::Store(format!("duplicate snapshot for {key}")));
        }
        if let Some(disk) = inner.disk.as_mut() {
            let bytes = serde_json::to_vec(&snapshot)?;
            disk.append(&key, &bytes)?;
        }
        let seq = inner.next_seq;
        inner.next_seq += 1;
        inner.entries.insert(key, (seq, snapshot));
        Ok(())
    }

    pub fn get(&self, key: &SnapshotKey) -> Result<Snapshot> {
        self.inner
            .lock()
            .expect("store lock")
            .entries
            .get(key)
            .map(|(_, s)| s.clone())
            .ok_or_else(|| Error::SnapshotNotFound(key.clone()))
    }

    pub fn contains(&self, key: &SnapshotKey) -> bool {
        self.inner.lock().expect("store lock").entries.contains_key(key)
    }

    /// Append a verdict to an existing snapshot's diagnostics. Disk-backed
    /// stores re-append the updated entry; replay is last-write-wins per
    /// key, so the verdict survives a reopen.
    pub fn attach_verdict(&self, key: &SnapshotKey, verdict: crate::monitor::Verdict) -> Result<()> {
        let mut inner = self.inner.lock().expect("store lock");
        let (_, snap) = inner
            .entries
            .get_mut(key)
            .ok_or_else(|| Error::SnapshotNotFound(key.clone()))?;
        snap.diagnostics.push(verdict);
        let updated = snap.clone();
        if let Some(disk) = inner.disk.as_mut() {
            let bytes = serde_json::to_vec(&updated)?;
            disk.append(key, &bytes)?;
        }
        Ok(())
    }

    /// Latest snapshot for a node by (epoch, attempt) order.
    pub fn latest(&self, node: &NodeId) -> Option<Snapshot> {
        let inner = self.inner.lock().expect("store lock");
        inner
            .entries
            .iter()
            .filter(|(k, _)| &k.node == node)
            .max_by_key(|(k, _)| (k.epoch, k.attempt))
            .map(|(_, (_, s))| s.clone())
    }

    pub fn keys(&self) -> Vec<SnapshotKey> {
        self.inner.lock().expect("store lock").entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store lock").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Current size of the on-disk log in bytes, if disk-backed.
    pub fn log_bytes(&self) -> Option<u64> {
        let inner = self.inner.lock().expect("store lock");
        inner.disk.as_ref().map(|d| d.offset)
    }

    /// Drop snapshots down to `budget` entries. The latest snapshot of every
    /// frontier node is always retained (budget below the frontier size is
    /// an error). Preference order for the remaining slots: latest snapshots
    /// of `preferred` nodes, then latest snapshots of other nodes by
    /// recency, then older attempts by recency. Disk-backed stores compact
    /// the log afterwards.
    pub fn prune(
        &self,
        budget: usize,
        frontier: &BTreeSet<NodeId>,
        preferred: &BTreeSet<NodeId>,
    ) -> Result<PruneReport> {
        let mut inner = self.inner.lock().expect("store lock");

        let mut latest_of: BTreeMap<NodeId, SnapshotKey> = BTreeMap::new();
        for key in inner.entries.keys() {
            let slot = latest_of.entry(key.node.clone()).or_insert_with(|| key.clone());
            if (key.epoch, key.attempt) > (slot.epoch, slot.attempt) {
                *slot = key.clone();
            }
        }

        let mut keep: BTreeSet<SnapshotKey> = BTreeSet::new();
        for node in frontier {
            if let Some(key) = latest_of.get(node) {
                keep.insert(key.clone());
            }
        }
        if keep.len() > budget {
            return Err(Error::Retention(format!(
                "budget {budget} below frontier size {}",
                keep.len()
            )));
        }

        let by_recency = |keys: &mut Vec<SnapshotKey>, inner: &Inner| {
            keys.sort_by_key(|k| std::cmp::Reverse(inner.entries[k].0));
        };

        let mut preferred_latest: Vec<SnapshotKey> = preferred
            .iter()
            .filter_map(|n| latest_of.get(n).cloned())
            .collect();
        by_recency(&mut preferred_latest, &inner);
        let mut other_latest: Vec<SnapshotKey> = latest_of
            .values()
            .filter(|k| !keep.contains(k) && !preferred_latest.contains(k))
            .cloned()
            .collect();
        by_recency(&mut other_latest, &inner);
        let mut older: Vec<SnapshotKey> = inner
            .entries
            .keys()
            .filter(|k| latest_of.get(&k.node) != Some(*k))
            .cloned()
            .collect();
        by_recency(&mut older, &inner);

        for key in preferred_latest.into_iter().chain(other_latest).chain(older) {
            if keep.len() >= budget {
                break;
            }
            keep.insert(key);
        }

        let dropped: Vec<SnapshotKey> = inner
            .entries
            .keys()
            .filter(|k| !keep.contains(k))
            .cloned()
            .collect();
        for key in &dropped {
            inner.entries.remove(key);
        }

        if inner.disk.is_some() {
            Self::compact(&mut inner)?;
        }

        let mut retained: Vec<SnapshotKey> = keep.into_iter().collect();
        retained.sort();
        Ok(PruneReport {
            retained,
            dropped,
            log_bytes: inner.disk.as_ref().map(|d| d.offset),
        })
    }

    /// Rewrite log and index from the in-memory map, in original append
    /// order, then swap files atomically.
    fn compact(inner: &mut Inner) -> Result<()> {
        let disk = inner.disk.as_mut().expect("compact requires disk");
        let tmp_log = disk.log_path.with_extension("log.tmp");
        let tmp_idx = disk.idx_path.with_extension("idx.tmp");

        let mut ordered: Vec<(&SnapshotKey, &(u64, Snapshot))> = inner.entries.iter().collect();
        ordered.sort_by_key(|(_, (seq, _))| *seq);

        {
            let mut log = File::create(&tmp_log)?;
            let mut idx = File::create(&tmp_idx)?;
            let mut offset = 0u64;
            for (key, (_, snap)) in &ordered {
                let bytes = serde_json::to_vec(snap)?;
                let len = bytes.len() as u32;
                log.write_all(&len.to_le_bytes())?;
                log.write_all(&bytes)?;
                writeln!(
                    idx,
                    "{}\t{}\t{}\t{}\t{}",
                    key.node, key.epoch.0, key.attempt, offset, len
                )?;
                offset += 4 + u64::from(len);
            }
            log.flush()?;
            idx.flush()?;
        }

        std::fs::rename(&tmp_log, &disk.log_path)?;
        std::fs::rename(&tmp_idx, &disk.idx_path)?;

        disk.log = OpenOptions::new().append(true).open(&disk.log_path)?;
        disk.idx = OpenOptions::new().append(true).open(&disk.idx_path)?;
        disk.offset = disk.log.metadata()?.len();
        Ok(())
    }
}
