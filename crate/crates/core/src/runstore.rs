//! On-disk run database.
//!
//! Layout of one run under the logs root:
//!
//! ```text
//! logs/<id>/
//!   metadata/config.yaml   resolved experiment config
//!   metadata/info.yaml     status, times, host, command, code version
//!   metadata/mlxp.yaml     tool settings used by the run
//!   metrics/<log>.json     JSON Lines, one object per log call
//!   metrics/keys/metrics.yaml
//!   artifacts/<category>/<name>
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;
use std::time::{Duration, Instant};

use chrono::{SecondsFormat, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ConfigTree};

pub const COUNTER_FILE: &str = ".id_counter";
pub const COUNTER_LOCK_FILE: &str = ".id_counter.lock";
pub const METADATA_DIR: &str = "metadata";
pub const METRICS_DIR: &str = "metrics";
pub const ARTIFACTS_DIR: &str = "artifacts";
pub const KEYS_FILE: &str = "metrics/keys/metrics.yaml";
pub const CHECKPOINT_CATEGORY: &str = "Checkpoint";
pub const CHECKPOINT_NAME: &str = "lastckpt.pkl";
pub const JOB_SCRIPT: &str = "script.sh";

pub const DEFAULT_LOCK_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum RunStoreError {
    #[error("timed out after {0:?} waiting for the id counter lock")]
    LockTimeout(Duration),
    #[error("run {0} is already initialized")]
    AlreadyInitialized(RunId),
    #[error("run {id} is {status}, expected RUNNING")]
    NotRunning { id: RunId, status: RunStatus },
    #[error("value of `{0}` is not a finite number")]
    NonFiniteValue(String),
    #[error("artifact {0} already exists")]
    ArtifactExists(PathBuf),
    #[error("illegal status transition {from} -> {to}")]
    IllegalTransition { from: RunStatus, to: RunStatus },
    #[error("`{0}` is not a valid single path component")]
    InvalidName(String),
    #[error("run directory {0} does not exist")]
    UnknownRun(PathBuf),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("malformed {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

type Result<T, E = RunStoreError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunStoreError + '_ {
    move |source| RunStoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Positive integer naming a run directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RunId(pub u64);

impl fmt::Display for RunId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for RunId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.parse().map(RunId)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RunStatus {
    Staged,
    Running,
    #[serde(alias = "COMPLETED")]
    Complete,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Staged => "STAGED",
            RunStatus::Running => "RUNNING",
            RunStatus::Complete => "COMPLETE",
            RunStatus::Failed => "FAILED",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Complete | RunStatus::Failed)
    }

    pub fn can_become(self, to: RunStatus) -> bool {
        use RunStatus::*;
        matches!(
            (self, to),
            (Staged, Running) | (Staged, Failed) | (Running, Complete) | (Running, Failed)
        )
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RunStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "STAGED" => Ok(RunStatus::Staged),
            "RUNNING" => Ok(RunStatus::Running),
            "COMPLETE" | "COMPLETED" => Ok(RunStatus::Complete),
            "FAILED" => Ok(RunStatus::Failed),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

/// Contents of `metadata/info.yaml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_time: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_time: Option<String>,
    #[serde(default)]
    pub hostname: String,
    #[serde(default)]
    pub command: String,
    #[serde(default)]
    pub work_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commit_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheduler_job_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_code: Option<i32>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub requeue_count: u32,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl RunInfo {
    pub fn staged() -> Self {
        RunInfo {
            status: RunStatus::Staged,
            start_time: None,
            end_time: None,
            hostname: hostname(),
            command: String::new(),
            work_dir: PathBuf::new(),
            commit_hash: None,
            snapshot_dir: None,
            scheduler_job_id: None,
            exit_code: None,
            requeue_count: 0,
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_yaml::from_str(&text).map_err(|e| RunStoreError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("info serializes")
    }
}

pub fn now_rfc3339() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn hostname() -> String {
    let mut buf = [0u8; 256];
    // SAFETY: buf is a valid writable buffer of the given length.
    let rc = unsafe { libc::gethostname(buf.as_mut_ptr().cast(), buf.len()) };
    if rc != 0 {
        return String::from("unknown");
    }
    let end = buf.iter().position(|&b| b == 0).unwrap_or(buf.len());
    String::from_utf8_lossy(&buf[..end]).into_owned()
}

/// A numeric metric value; integers keep their integer form on disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricValue {
    Int(i64),
    Float(f64),
}

impl MetricValue {
    pub fn as_f64(self) -> f64 {
        match self {
            MetricValue::Int(i) => i as f64,
            MetricValue::Float(f) => f,
        }
    }
}

impl From<f64> for MetricValue {
    fn from(f: f64) -> Self {
        MetricValue::Float(f)
    }
}

impl From<i64> for MetricValue {
    fn from(i: i64) -> Self {
        MetricValue::Int(i)
    }
}

/// One call to `log_metrics`: a flat map of numbers under a log name.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricLine {
    pub log_name: String,
    pub entry: IndexMap<String, MetricValue>,
}

impl MetricLine {
    pub fn new(log_name: impl Into<String>) -> Self {
        MetricLine {
            log_name: log_name.into(),
            entry: IndexMap::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl Into<MetricValue>) -> Self {
        self.entry.insert(key.into(), value.into());
        self
    }

    /// Builds a line from a JSON object whose values are all numbers.
    pub fn from_json(log_name: &str, value: &serde_json::Value) -> Result<Self> {
        let obj = value.as_object().ok_or_else(|| RunStoreError::Malformed {
            path: PathBuf::from("<metric line>"),
            message: "expected a JSON object".to_string(),
        })?;
        let mut line = MetricLine::new(log_name);
        for (k, v) in obj {
            let value = if let Some(i) = v.as_i64() {
                MetricValue::Int(i)
            } else if let Some(f) = v.as_f64() {
                MetricValue::Float(f)
            } else {
                return Err(RunStoreError::Malformed {
                    path: PathBuf::from("<metric line>"),
                    message: format!("value of `{k}` is not a number"),
                });
            };
            line.entry.insert(k.clone(), value);
        }
        Ok(line)
    }

    fn to_json_line(&self) -> Result<String> {
        let mut obj = serde_json::Map::new();
        for (k, v) in &self.entry {
            let json = match *v {
                MetricValue::Int(i) => serde_json::Value::from(i),
                MetricValue::Float(f) => serde_json::Number::from_f64(f)
                    .map(serde_json::Value::Number)
                    .ok_or_else(|| RunStoreError::NonFiniteValue(k.clone()))?,
            };
            obj.insert(k.clone(), json);
        }
        let mut s = serde_json::to_string(&serde_json::Value::Object(obj)).expect("json");
        s.push('\n');
        Ok(s)
    }
}

/// Metric key catalog: log name to sorted key list.
pub type KeyCatalog = BTreeMap<String, Vec<String>>;

pub fn read_key_catalog(run_dir: &Path) -> Result<KeyCatalog> {
    let path = run_dir.join(KEYS_FILE);
    if !path.exists() {
        return Ok(KeyCatalog::new());
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let parsed: Option<KeyCatalog> =
        serde_yaml::from_str(&text).map_err(|e| RunStoreError::Malformed {
            path: path.clone(),
            message: e.to_string(),
        })?;
    Ok(parsed.unwrap_or_default())
}

fn check_component(name: &str) -> Result<()> {
    if name.is_empty()
        || name == "."
        || name == ".."
        || name.contains(['/', '\\', '\0'])
    {
        return Err(RunStoreError::InvalidName(name.to_string()));
    }
    Ok(())
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
/// `before_rename` runs between the two steps; an error there aborts the
/// rename and leaves the previous file in place.
pub(crate) fn write_atomic_with(
    path: &Path,
    bytes: &[u8],
    before_rename: impl FnOnce() -> io::Result<()>,
) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp.{}", std::process::id()));
    let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    before_rename().map_err(io_err(path))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_with(path, bytes, || Ok(()))
}

/// Holds an exclusive advisory lock on a file until dropped.
pub(crate) struct FileLock {
    file: File,
}

impl FileLock {
    pub(crate) fn acquire(path: &Path, timeout: Duration) -> Result<FileLock> {
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        let deadline = Instant::now() + timeout;
        let mut backoff = Duration::from_millis(1);
        loop {
            match file.try_lock() {
                Ok(()) => return Ok(FileLock { file }),
                Err(fs::TryLockError::WouldBlock) => {
                    if Instant::now() >= deadline {
                        return Err(RunStoreError::LockTimeout(timeout));
                    }
                    thread::sleep(backoff);
                    backoff = (backoff * 2).min(Duration::from_millis(20));
                }
                Err(fs::TryLockError::Error(e)) => return Err(io_err(path)(e)),
            }
        }
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}

/// Handle on a logs root.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
    lock_timeout: Duration,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunStore {
            root: root.into(),
            lock_timeout: DEFAULT_LOCK_TIMEOUT,
        }
    }

    pub fn with_lock_timeout(mut self, timeout: Duration) -> Self {
        self.lock_timeout = timeout;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, id: RunId) -> PathBuf {
        self.root.join(id.to_string())
    }

    fn ensure_root(&self) -> Result<()> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))
    }

    fn highest_dir_id(&self) -> Result<u64> {
        let mut max = 0;
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            if let Some(id) = entry.file_name().to_str().and_then(|s| s.parse::<u64>().ok()) {
                max = max.max(id);
            }
        }
        Ok(max)
    }

    fn read_counter(&self) -> Result<u64> {
        let path = self.root.join(COUNTER_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => text.trim().parse().map_err(|_| RunStoreError::Malformed {
                path,
                message: format!("counter holds `{}`", text.trim()),
            }),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// The id the next allocation would return, without allocating it.
    pub fn peek_next_id(&self) -> Result<RunId> {
        if !self.root.exists() {
            return Ok(RunId(1));
        }
        Ok(RunId(self.read_counter()?.max(self.highest_dir_id()?) + 1))
    }

    /// Allocates a fresh id under the counter lock and creates its
    /// `metadata/` directory with a STAGED `info.yaml`.
    pub fn allocate_run_id(&self) -> Result<RunId> {
        self.ensure_root()?;
        let _lock = FileLock::acquire(&self.root.join(COUNTER_LOCK_FILE), self.lock_timeout)?;
        let next = self.read_counter()?.max(self.highest_dir_id()?) + 1;
        let id = RunId(next);
        let meta = self.run_dir(id).join(METADATA_DIR);
        fs::create_dir_all(&meta).map_err(io_err(&meta))?;
        write_atomic(&meta.join("info.yaml"), RunInfo::staged().to_yaml().as_bytes())?;
        write_atomic(&self.root.join(COUNTER_FILE), format!("{next}\n").as_bytes())?;
        Ok(id)
    }

    /// Writes the metadata files and creates the metrics and artifacts
    /// directories of a freshly allocated run.
    pub fn init_run(
        &self,
        id: RunId,
        config: &ConfigTree,
        settings: &ConfigTree,
        info: RunInfo,
    ) -> Result<RunRecord> {
        let root = self.run_dir(id);
        let meta = root.join(METADATA_DIR);
        if !meta.is_dir() {
            return Err(RunStoreError::UnknownRun(root));
        }
        let config_path = meta.join("config.yaml");
        if config_path.exists() {
            return Err(RunStoreError::AlreadyInitialized(id));
        }
        let current = RunInfo::read(&meta.join("info.yaml"))?;
        if current.status != RunStatus::Staged {
            return Err(RunStoreError::AlreadyInitialized(id));
        }
        let keys = root.join("metrics/keys");
        fs::create_dir_all(&keys).map_err(io_err(&keys))?;
        let artifacts = root.join(ARTIFACTS_DIR);
        fs::create_dir_all(&artifacts).map_err(io_err(&artifacts))?;
        write_atomic(&root.join(KEYS_FILE), b"{}\n")?;
        write_atomic(&meta.join("mlxp.yaml"), settings.to_yaml_string().as_bytes())?;
        write_atomic(&meta.join("info.yaml"), info.to_yaml().as_bytes())?;
        // config.yaml last: its presence marks the run as initialized.
        write_atomic(&config_path, config.to_yaml_string().as_bytes())?;
        Ok(RunRecord {
            id,
            root,
            config: config.clone(),
            info,
            settings: settings.clone(),
        })
    }

    pub fn open(&self, id: RunId) -> Result<RunRecord> {
        RunRecord::open(&self.run_dir(id))
    }

    /// Ids of all numeric run directories, ascending.
    pub fn run_ids(&self) -> Result<Vec<RunId>> {
        if !self.root.exists() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(io_err(&self.root))? {
            let entry = entry.map_err(io_err(&self.root))?;
            if let Some(id) = entry.file_name().to_str().and_then(|s| s.parse().ok()) {
                if entry.path().is_dir() {
                    ids.push(RunId(id));
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// One initialized run directory.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub id: RunId,
    pub root: PathBuf,
    pub config: ConfigTree,
    pub info: RunInfo,
    pub settings: ConfigTree,
}

impl RunRecord {
    pub fn open(run_dir: &Path) -> Result<RunRecord> {
        let meta = run_dir.join(METADATA_DIR);
        if !meta.is_dir() {
            return Err(RunStoreError::UnknownRun(run_dir.to_path_buf()));
        }
        let id = run_dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| RunStoreError::UnknownRun(run_dir.to_path_buf()))?;
        let info = RunInfo::read(&meta.join("info.yaml"))?;
        let load = |name: &str| -> Result<ConfigTree> {
            let p = meta.join(name);
            if p.exists() {
                Ok(ConfigTree::from_yaml_file(&p)?)
            } else {
                Ok(ConfigTree::new())
            }
        };
        Ok(RunRecord {
            id,
            root: run_dir.to_path_buf(),
            config: load("config.yaml")?,
            info,
            settings: load("mlxp.yaml")?,
        })
    }

    pub fn status(&self) -> RunStatus {
        self.info.status
    }

    pub fn metadata_dir(&self) -> PathBuf {
        self.root.join(METADATA_DIR)
    }

    pub fn config_path(&self) -> PathBuf {
        self.metadata_dir().join("config.yaml")
    }

    pub fn metrics_dir(&self) -> PathBuf {
        self.root.join(METRICS_DIR)
    }

    fn require_running(&self) -> Result<()> {
        if self.info.status != RunStatus::Running {
            return Err(RunStoreError::NotRunning {
                id: self.id,
                status: self.info.status,
            });
        }
        Ok(())
    }

    /// Rewrites `info.yaml` from the in-memory copy.
    pub fn save_info(&self) -> Result<()> {
        write_atomic(
            &self.metadata_dir().join("info.yaml"),
            self.info.to_yaml().as_bytes(),
        )
    }

    /// Re-reads `info.yaml` from disk.
    pub fn reload_info(&mut self) -> Result<()> {
        self.info = RunInfo::read(&self.metadata_dir().join("info.yaml"))?;
        Ok(())
    }

    fn info_lock_path(&self) -> PathBuf {
        let parent = self.root.parent().unwrap_or(Path::new("."));
        parent.join(".locks").join(format!("{}.lock", self.id))
    }

    /// Read-modify-write of `info.yaml` under the run's lock, so that the
    /// submitting process and the running job never clobber each other.
    pub fn update_info<T>(&mut self, f: impl FnOnce(&mut RunInfo) -> Result<T>) -> Result<T> {
        let lock_path = self.info_lock_path();
        let dir = lock_path.parent().expect("lock path has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let _lock = FileLock::acquire(&lock_path, DEFAULT_LOCK_TIMEOUT)?;
        self.reload_info()?;
        let mut info = self.info.clone();
        let out = f(&mut info)?;
        self.info = info;
        self.save_info()?;
        Ok(out)
    }

    pub fn update_status(&mut self, to: RunStatus, exit_code: Option<i32>) -> Result<()> {
        self.update_info(|info| {
            let from = info.status;
            if !from.can_become(to) {
                return Err(RunStoreError::IllegalTransition { from, to });
            }
            info.status = to;
            if to == RunStatus::Running {
                info.start_time = Some(now_rfc3339());
            }
            if to.is_terminal() {
                info.end_time = Some(now_rfc3339());
                info.exit_code = exit_code;
            }
            Ok(())
        })
    }

    /// RUNNING to RUNNING re-entry for a requeued job.
    pub fn requeue(&mut self) -> Result<()> {
        self.update_info(|info| {
            if info.status != RunStatus::Running {
                return Err(RunStoreError::IllegalTransition {
                    from: info.status,
                    to: RunStatus::Running,
                });
            }
            info.requeue_count += 1;
            info.start_time = Some(now_rfc3339());
            Ok(())
        })
    }

    /// Appends one JSON line to `metrics/<log_name>.json` and merges its
    /// keys into the catalog.
    pub fn log_metrics(&self, line: &MetricLine) -> Result<()> {
        self.require_running()?;
        check_component(&line.log_name)?;
        if line.log_name.contains('.') {
            return Err(RunStoreError::InvalidName(line.log_name.clone()));
        }
        for (k, v) in &line.entry {
            if k.is_empty() || k.contains('.') {
                return Err(RunStoreError::InvalidName(k.clone()));
            }
            if let MetricValue::Float(f) = v {
                if !f.is_finite() {
                    return Err(RunStoreError::NonFiniteValue(k.clone()));
                }
            }
        }
        let text = line.to_json_line()?;
        let dir = self.metrics_dir();
        fs::create_dir_all(dir.join("keys")).map_err(io_err(&dir))?;
        let path = dir.join(format!("{}.json", line.log_name));
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        f.write_all(text.as_bytes()).map_err(io_err(&path))?;
        f.flush().map_err(io_err(&path))?;

        let mut catalog = read_key_catalog(&self.root)?;
        let keys = catalog.entry(line.log_name.clone()).or_default();
        let before = keys.len();
        let is_new_log = before == 0;
        for k in line.entry.keys() {
            if let Err(pos) = keys.binary_search(k) {
                keys.insert(pos, k.clone());
            }
        }
        if keys.len() != before || is_new_log {
            let yaml = serde_yaml::to_string(&catalog).expect("catalog serializes");
            write_atomic(&self.root.join(KEYS_FILE), yaml.as_bytes())?;
        }
        Ok(())
    }

    pub fn log_artifact(
        &self,
        category: &str,
        name: &str,
        bytes: &[u8],
        overwrite: bool,
    ) -> Result<PathBuf> {
        self.require_running()?;
        check_component(category)?;
        check_component(name)?;
        let dir = self.root.join(ARTIFACTS_DIR).join(category);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(name);
        if overwrite {
            write_atomic(&path, bytes)?;
        } else {
            let mut f = match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(f) => f,
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    return Err(RunStoreError::ArtifactExists(path))
                }
                Err(e) => return Err(io_err(&path)(e)),
            };
            f.write_all(bytes).map_err(io_err(&path))?;
        }
        Ok(path)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.root
            .join(ARTIFACTS_DIR)
            .join(CHECKPOINT_CATEGORY)
            .join(CHECKPOINT_NAME)
    }

    pub fn log_checkpoint(&self, bytes: &[u8]) -> Result<()> {
        self.log_checkpoint_with(bytes, || Ok(()))
    }

    pub(crate) fn log_checkpoint_with(
        &self,
        bytes: &[u8],
        before_rename: impl FnOnce() -> io::Result<()>,
    ) -> Result<()> {
        self.require_running()?;
        let path = self.checkpoint_path();
        let dir = path.parent().expect("checkpoint has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_atomic_with(&path, bytes, before_rename)
    }

    pub fn load_checkpoint(&self) -> Result<Option<Vec<u8>>> {
        let path = self.checkpoint_path();
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

/// A departure of a run directory from the expected layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutViolation {
    pub run_dir: PathBuf,
    pub problem: String,
}

impl fmt::Display for LayoutViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.run_dir.display(), self.problem)
    }
}

/// Structural check of one run directory against the run layout.
pub fn validate_layout(run_dir: &Path) -> Vec<LayoutViolation> {
    let mut out = Vec::new();
    let mut bad = |problem: String| {
        out.push(LayoutViolation {
            run_dir: run_dir.to_path_buf(),
            problem,
        })
    };
    let allowed_top = [METADATA_DIR, METRICS_DIR, ARTIFACTS_DIR];
    for d in allowed_top {
        if !run_dir.join(d).is_dir() {
            bad(format!("missing directory {d}/"));
        }
    }
    for f in ["config.yaml", "info.yaml", "mlxp.yaml"] {
        if !run_dir.join(METADATA_DIR).join(f).is_file() {
            bad(format!("missing metadata/{f}"));
        }
    }
    if !run_dir.join(KEYS_FILE).is_file() {
        bad(format!("missing {KEYS_FILE}"));
    }
    let list = |p: &Path| -> Vec<(String, bool)> {
        fs::read_dir(p)
            .map(|rd| {
                rd.filter_map(|e| e.ok())
                    .map(|e| {
                        (
                            e.file_name().to_string_lossy().into_owned(),
                            e.path().is_dir(),
                        )
                    })
                    .collect()
            })
            .unwrap_or_default()
    };
    for (name, _) in list(run_dir) {
        if !allowed_top.contains(&name.as_str()) {
            bad(format!("unexpected entry {name}"));
        }
    }
    for (name, is_dir) in list(&run_dir.join(METADATA_DIR)) {
        let known = ["config.yaml", "info.yaml", "mlxp.yaml", JOB_SCRIPT];
        if is_dir || !known.contains(&name.as_str()) {
            bad(format!("unexpected entry metadata/{name}"));
        }
    }
    for (name, is_dir) in list(&run_dir.join(METRICS_DIR)) {
        let ok = if is_dir {
            name == "keys"
        } else {
            name.ends_with(".json") && name.len() > 5
        };
        if !ok {
            bad(format!("unexpected entry metrics/{name}"));
        }
    }
    for (name, is_dir) in list(&run_dir.join(ARTIFACTS_DIR)) {
        if !is_dir {
            bad(format!("artifact {name} is not inside a category directory"));
        }
    }
    match read_key_catalog(run_dir) {
        Ok(catalog) => {
            for log in catalog.keys() {
                if !run_dir.join(METRICS_DIR).join(format!("{log}.json")).is_file() {
                    bad(format!("catalog lists {log} but metrics/{log}.json is missing"));
                }
            }
            for (name, is_dir) in list(&run_dir.join(METRICS_DIR)) {
                if let Some(log) = name.strip_suffix(".json") {
                    if !is_dir && !catalog.contains_key(log) {
                        bad(format!("metrics/{name} is not in the key catalog"));
                    }
                }
            }
        }
        Err(e) => bad(format!("unreadable key catalog: {e}")),
    }
    if let Ok(info) = RunInfo::read(&run_dir.join(METADATA_DIR).join("info.yaml")) {
        if info.status.is_terminal() != info.end_time.is_some() {
            bad("end_time must be present exactly for terminal states".to_string());
        }
    }
    out
}
