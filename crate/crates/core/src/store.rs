//! The on-disk store: both tiers, the WAL and the change-detection hashes
//! under one data directory.
//!
//! ```text
//! <data_dir>/config.json        dimension the store was created with
//! <data_dir>/wal.log            dual-tier write-ahead log
//! <data_dir>/hash_store.json    per-document chunk hashes
//! <data_dir>/cold/commits.log   cold-tier event log
//! <data_dir>/hot/records.bin    hot-tier records
//! <data_dir>/hot/tombstones.bin
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, MutexGuard};
use serde::{Deserialize, Serialize};

use crate::change_detection::HashStore;
use crate::clock::{Clock, SystemClock};
use crate::cold::ColdTier;
use crate::error::{Error, Result};
use crate::failpoint::Failpoints;
use crate::hot::{HnswParams, HotTier};
use crate::transactions::{ReconcileReport, Wal, WAL_FILE};

pub const CONFIG_FILE: &str = "config.json";
pub const HASH_STORE_FILE: &str = "hash_store.json";

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub data_dir: PathBuf,
    pub dimension: usize,
    pub hnsw: HnswParams,
    pub read_only: bool,
    /// Run reconcile while opening a writable store.
    pub reconcile_on_open: bool,
    /// Unresolved WAL entries younger than this are left to their writer.
    pub staleness_threshold_ms: i64,
    /// Hot-tier attempts per cold_written entry before compensation.
    pub max_hot_retries: u32,
    /// Compact the hot tier after commits once tombstones pass the threshold.
    pub auto_compact: bool,
}

impl StoreConfig {
    pub fn new(data_dir: impl Into<PathBuf>, dimension: usize) -> Self {
        Self {
            data_dir: data_dir.into(),
            dimension,
            hnsw: HnswParams::default(),
            read_only: false,
            reconcile_on_open: true,
            staleness_threshold_ms: 0,
            max_hot_retries: 3,
            auto_compact: true,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PersistedConfig {
    dimension: usize,
}

#[derive(Debug)]
pub struct Store {
    config: StoreConfig,
    clock: Arc<dyn Clock>,
    failpoints: Arc<Failpoints>,
    wal: Wal,
    cold: ColdTier,
    hot: HotTier,
    hashes: HashStore,
    writer: Mutex<()>,
    open_report: Option<ReconcileReport>,
}

/// Exclusive write access. Commits and reconciliation go through this.
pub struct Writer<'a> {
    store: &'a Store,
    _guard: MutexGuard<'a, ()>,
}

impl<'a> Writer<'a> {
    pub fn store(&self) -> &'a Store {
        self.store
    }
}

impl Store {
    pub fn open(config: StoreConfig, clock: Arc<dyn Clock>, failpoints: Arc<Failpoints>) -> Result<Self> {
        let dir = &config.data_dir;
        check_config(dir, config.dimension, config.read_only)?;
        let writable = !config.read_only;
        let wal = Wal::open(&dir.join(WAL_FILE), writable)?;
        let cold = ColdTier::open(
            &dir.join("cold"),
            config.dimension,
            failpoints.clone(),
            writable,
            &wal.unresolved_ids(),
        )?;
        let hot = HotTier::open(dir.join("hot"), config.dimension, config.hnsw, failpoints.clone(), writable)?;
        let hashes = HashStore::load(dir.join(HASH_STORE_FILE))?;
        let mut store = Self {
            config,
            clock,
            failpoints,
            wal,
            cold,
            hot,
            hashes,
            writer: Mutex::new(()),
            open_report: None,
        };
        if writable && store.config.reconcile_on_open {
            store.open_report = Some(store.reconcile()?);
        }
        Ok(store)
    }

    /// What reconciliation did while opening, if it ran.
    pub fn open_report(&self) -> Option<&ReconcileReport> {
        self.open_report.as_ref()
    }

    /// Open with the system clock and no failpoints.
    pub fn open_default(config: StoreConfig) -> Result<Self> {
        Self::open(config, Arc::new(SystemClock::new()), Arc::new(Failpoints::new()))
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn data_dir(&self) -> &Path {
        &self.config.data_dir
    }

    pub fn is_read_only(&self) -> bool {
        self.config.read_only
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn failpoints(&self) -> &Arc<Failpoints> {
        &self.failpoints
    }

    pub fn wal(&self) -> &Wal {
        &self.wal
    }

    pub fn cold(&self) -> &ColdTier {
        &self.cold
    }

    pub fn hot(&self) -> &HotTier {
        &self.hot
    }

    pub fn hashes(&self) -> &HashStore {
        &self.hashes
    }

    /// Take the writer lock, reconciling first if earlier commits were left
    /// unresolved.
    pub fn writer(&self) -> Result<Writer<'_>> {
        let w = self.writer_unchecked()?;
        if !self.wal.unresolved().is_empty() {
            w.reconcile();
            let left = self.wal.unresolved().len();
            if left > 0 {
                return Err(Error::Unreconciled(left));
            }
        }
        Ok(w)
    }

    pub(crate) fn writer_unchecked(&self) -> Result<Writer<'_>> {
        if self.config.read_only {
            return Err(Error::ReadOnly);
        }
        Ok(Writer {
            store: self,
            _guard: self.writer.lock(),
        })
    }

    /// Compact the hot tier if its tombstone ratio warrants it.
    pub fn compact(&self) -> Result<bool> {
        let _w = self.writer_unchecked()?;
        self.hot.compact()
    }

    pub fn force_compact(&self) -> Result<()> {
        let _w = self.writer_unchecked()?;
        self.hot.force_compact()
    }
}

/// Dimension recorded in an initialized data directory.
pub fn stored_dimension(dir: &Path) -> Result<Option<usize>> {
    let path = dir.join(CONFIG_FILE);
    match fs::read(&path) {
        Ok(bytes) => serde_json::from_slice::<PersistedConfig>(&bytes)
            .map(|c| Some(c.dimension))
            .map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::io(&path, e)),
    }
}

fn check_config(dir: &Path, dimension: usize, read_only: bool) -> Result<()> {
    let path = dir.join(CONFIG_FILE);
    match fs::read(&path) {
        Ok(bytes) => {
            let saved: PersistedConfig = serde_json::from_slice(&bytes)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            if saved.dimension != dimension {
                return Err(Error::Config(format!(
                    "data directory {} was initialized with dimension {}, not {dimension}",
                    dir.display(),
                    saved.dimension
                )));
            }
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            if read_only {
                return Err(Error::Config(format!(
                    "data directory {} is not initialized",
                    dir.display()
                )));
            }
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let json = serde_json::to_vec_pretty(&PersistedConfig { dimension }).expect("config serializes");
            let tmp = path.with_extension("json.tmp");
            fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
            fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
        }
        Err(e) => Err(Error::io(&path, e)),
    }
}
