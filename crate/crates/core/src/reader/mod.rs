//! Reading results back: index every run under a logs root from its
//! metadata, filter with a small boolean query language, and work with the
//! matching runs as a frame whose metric columns load only on access.

mod aggregate;
mod frame;
mod query;
mod table;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use indexmap::IndexMap;
use thiserror::Error;

use crate::config::{ConfigTree, Scalar};
use crate::runstore::{read_key_catalog, MetricValue, RunId, METADATA_DIR, METRICS_DIR};

pub use aggregate::AggregationMap;
pub use frame::{Cell, DiffTable, GroupKey, GroupedFrames, ResultFrame};
pub use query::{normalize_status, parse_query, CmpOp, Query, QueryError};
pub use table::{Table, Value};

#[derive(Debug, Error)]
pub enum ReaderError {
    #[error("logs root {0} does not exist")]
    MissingLogsRoot(PathBuf),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("run {run} has no metric `{column}`")]
    MissingMetric { run: RunId, column: String },
    #[error("corrupt metric line {line} in {path}")]
    CorruptMetricLine { path: PathBuf, line: usize },
    #[error("cannot group on metric column `{0}`")]
    NonMetadataGroupKey(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{column}` has unequal lengths within a group: {}", fmt_lengths(lengths))]
    LengthMismatch {
        column: String,
        lengths: Vec<(RunId, usize)>,
    },
    #[error("column `{column}` is missing for run {run}")]
    MissingColumnInGroup { column: String, run: RunId },
    #[error("column `{column}` of run {run} is not numeric")]
    NonNumeric { column: String, run: RunId },
    #[error("frame is empty")]
    EmptyFrame,
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn fmt_lengths(l: &[(RunId, usize)]) -> String {
    l.iter()
        .map(|(id, n)| format!("run {id}: {n}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T, E = ReaderError> = std::result::Result<T, E>;

/// One indexed run: flat metadata plus where its metrics live.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub id: RunId,
    pub dir: PathBuf,
    /// Dotted keys prefixed `config.`, `info.` and `mlxp.`.
    pub meta: IndexMap<String, Scalar>,
    /// Metric column `<log>.<key>` to its log name and key.
    pub metrics: IndexMap<String, (String, String)>,
}

/// A run directory that could not be indexed, and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quarantined {
    pub dir: PathBuf,
    pub id: Option<RunId>,
    pub reason: String,
}

impl fmt::Display for Quarantined {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.id {
            Some(id) => write!(f, "{id}: {}", self.reason),
            None => write!(f, "{}: {}", self.dir.display(), self.reason),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReaderOptions {
    /// Unknown query keys and type mismatches are errors, and corrupt
    /// metric lines are not skipped.
    pub strict: bool,
}

/// Parsed lines of one metrics file.
#[derive(Debug, Default)]
pub(crate) struct LogData {
    lines: Vec<IndexMap<String, MetricValue>>,
}

/// Loads and caches metric files; counts every file it opens.
#[derive(Debug, Default)]
pub(crate) struct MetricStore {
    strict: bool,
    reads: AtomicUsize,
    cache: Mutex<HashMap<(RunId, String), Arc<LogData>>>,
}

impl MetricStore {
    fn log(&self, row: &RunRow, log_name: &str) -> Result<Arc<LogData>> {
        let mut cache = self.cache.lock().unwrap_or_else(|p| p.into_inner());
        let key = (row.id, log_name.to_string());
        if let Some(hit) = cache.get(&key) {
            return Ok(Arc::clone(hit));
        }
        let path = row.dir.join(METRICS_DIR).join(format!("{log_name}.json"));
        self.reads.fetch_add(1, Ordering::SeqCst);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => String::new(),
            Err(source) => return Err(ReaderError::Io { path, source }),
        };
        let data = Arc::new(parse_log(&path, &text, self.strict)?);
        cache.insert(key, Arc::clone(&data));
        Ok(data)
    }
}

fn parse_log(path: &Path, text: &str, strict: bool) -> Result<LogData> {
    let mut lines = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<serde_json::Value>(raw)
            .ok()
            .and_then(|v| {
                let obj = v.as_object()?;
                let mut entry = IndexMap::new();
                for (k, v) in obj {
                    let mv = match v.as_i64() {
                        Some(i) => MetricValue::Int(i),
                        None => MetricValue::Float(v.as_f64()?),
                    };
                    entry.insert(k.clone(), mv);
                }
                Some(entry)
            });
        match parsed {
            Some(entry) => lines.push(entry),
            None if strict => {
                return Err(ReaderError::CorruptMetricLine {
                    path: path.to_path_buf(),
                    line: n + 1,
                })
            }
            None => break,
        }
    }
    Ok(LogData { lines })
}

/// Index over every run under a logs root.
#[derive(Debug, Clone)]
pub struct Reader {
    root: PathBuf,
    options: ReaderOptions,
    rows: Vec<Arc<RunRow>>,
    quarantine: Vec<Quarantined>,
    searchable: Vec<String>,
    store: Arc<MetricStore>,
}

impl Reader {
    pub fn open(root: impl AsRef<Path>) -> Result<Reader> {
        Reader::open_with(root, ReaderOptions::default())
    }

    /// Reads only metadata YAML and the metric key catalog of each run.
    pub fn open_with(root: impl AsRef<Path>, options: ReaderOptions) -> Result<Reader> {
        let root = root.as_ref().to_path_buf();
        if !root.is_dir() {
            return Err(ReaderError::MissingLogsRoot(root));
        }
        let entries = fs::read_dir(&root).map_err(|source| ReaderError::Io {
            path: root.clone(),
            source,
        })?;
        let mut dirs: Vec<(RunId, PathBuf)> = Vec::new();
        for entry in entries.flatten() {
            let name = entry.file_name();
            let Some(id) = name.to_str().and_then(|s| s.parse::<u64>().ok()) else {
                continue;
            };
            if entry.path().is_dir() {
                dirs.push((RunId(id), entry.path()));
            }
        }
        dirs.sort();

        let mut rows = Vec::new();
        let mut quarantine = Vec::new();
        let mut keys = BTreeSet::new();
        for (id, dir) in dirs {
            match index_run(id, &dir) {
                Ok(row) => {
                    keys.extend(row.meta.keys().cloned());
                    rows.push(Arc::new(row));
                }
                Err(reason) => quarantine.push(Quarantined {
                    dir,
                    id: Some(id),
                    reason,
                }),
            }
        }
        Ok(Reader {
            root,
            options,
            rows,
            quarantine,
            searchable: keys.into_iter().collect(),
            store: Arc::new(MetricStore {
                strict: options.strict,
                ..Default::default()
            }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Arc<RunRow>] {
        &self.rows
    }

    pub fn quarantine(&self) -> &[Quarantined] {
        &self.quarantine
    }

    /// Sorted union of metadata keys usable in queries.
    pub fn searchable(&self) -> &[String] {
        &self.searchable
    }

    /// Number of metric files opened so far by this reader and its frames.
    pub fn metric_reads(&self) -> usize {
        self.store.reads.load(Ordering::SeqCst)
    }

    /// Every indexed run.
    pub fn all(&self) -> ResultFrame {
        ResultFrame::new(Arc::clone(&self.store), self.rows.clone())
    }

    pub fn filter(&self, query_string: &str) -> Result<ResultFrame> {
        let q = parse_query(query_string)?;
        self.filter_query(&q)
    }

    pub fn filter_query(&self, query: &Query) -> Result<ResultFrame> {
        if self.options.strict {
            for key in query.keys() {
                if self.searchable.binary_search_by(|k| k.as_str().cmp(key)).is_err() {
                    return Err(QueryError::UnknownKey(key.to_string()).into());
                }
            }
        }
        let mut rows = Vec::new();
        for row in &self.rows {
            if query.eval(&row.meta, self.options.strict)? {
                rows.push(Arc::clone(row));
            }
        }
        Ok(ResultFrame::new(Arc::clone(&self.store), rows))
    }
}

fn load_section(
    meta: &mut IndexMap<String, Scalar>,
    prefix: &str,
    path: &Path,
    required: bool,
) -> std::result::Result<(), String> {
    if !path.exists() {
        return if required {
            Err(format!("missing {}", rel(path)))
        } else {
            Ok(())
        };
    }
    let tree = ConfigTree::from_yaml_file(path).map_err(|e| e.to_string())?;
    for (k, v) in tree.flatten() {
        meta.insert(format!("{prefix}.{k}"), v);
    }
    Ok(())
}

fn rel(path: &Path) -> String {
    let n = path.components().count();
    path.components()
        .skip(n.saturating_sub(2))
        .collect::<PathBuf>()
        .display()
        .to_string()
}

fn index_run(id: RunId, dir: &Path) -> std::result::Result<RunRow, String> {
    let md = dir.join(METADATA_DIR);
    let mut meta = IndexMap::new();
    let mut info = IndexMap::new();
    load_section(&mut info, "info", &md.join("info.yaml"), true)?;
    load_section(&mut meta, "config", &md.join("config.yaml"), false)?;
    if let Some(Scalar::Text(s)) = info.get_mut("info.status") {
        *s = normalize_status(s).to_string();
    }
    meta.extend(info);
    load_section(&mut meta, "mlxp", &md.join("mlxp.yaml"), false)?;

    let catalog = read_key_catalog(dir).map_err(|e| e.to_string())?;
    let mut metrics = IndexMap::new();
    for (log, keys) in catalog {
        for key in keys {
            metrics.insert(format!("{log}.{key}"), (log.clone(), key));
        }
    }
    metrics.sort_keys();
    Ok(RunRow {
        id,
        dir: dir.to_path_buf(),
        meta,
        metrics,
    })
}

#[cfg(test)]
pub(crate) mod fixture {
    use super::*;
    use crate::runstore::{MetricLine, RunInfo, RunStatus, RunStore};

    /// The four-run sweep over `seed` and `optimizer.lr` with fixed statuses.
    pub const FOUR_RUNS: [(i64, f64, RunStatus); 4] = [
        (0, 1.0, RunStatus::Complete),
        (1, 1.0, RunStatus::Complete),
        (0, 0.1, RunStatus::Failed),
        (1, 10.0, RunStatus::Complete),
    ];

    pub fn four_runs(root: &Path) {
        let store = RunStore::new(root);
        for (seed, lr, status) in FOUR_RUNS {
            let mut cfg = ConfigTree::new();
            cfg.set("seed", Scalar::Int(seed)).unwrap();
            cfg.set("optimizer.lr", Scalar::Float(lr)).unwrap();
            let id = store.allocate_run_id().unwrap();
            let mut rec = store
                .init_run(id, &cfg, &ConfigTree::new(), RunInfo::staged())
                .unwrap();
            rec.update_status(RunStatus::Running, None).unwrap();
            for i in 1..=10i64 {
                let loss = lr / (i as f64 + seed as f64);
                rec.log_metrics(&MetricLine::new("train").with("iter", i).with("loss", loss))
                    .unwrap();
            }
            let code = if status == RunStatus::Complete { 0 } else { 1 };
            rec.update_status(status, Some(code)).unwrap();
        }
    }
}
