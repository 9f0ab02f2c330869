use std::fmt;
use std::sync::Arc;

use crate::config::Scalar;
use crate::runstore::{MetricValue, RunId};

use super::{MetricStore, ReaderError, Result, RunRow, Table, Value};

/// What a frame holds at a given row and column, without loading anything.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell<'a> {
    Meta(&'a Scalar),
    /// A metric stored for this run, not yet read.
    Lazy,
    Absent,
}

/// Rows of runs with eager metadata columns and lazy metric columns.
#[derive(Debug, Clone)]
pub struct ResultFrame {
    store: Arc<MetricStore>,
    rows: Vec<Arc<RunRow>>,
}

impl ResultFrame {
    pub(crate) fn new(store: Arc<MetricStore>, rows: Vec<Arc<RunRow>>) -> Self {
        ResultFrame { store, rows }
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

    pub fn run_ids(&self) -> Vec<RunId> {
        self.rows.iter().map(|r| r.id).collect()
    }

    /// Metadata columns in order of first appearance.
    pub fn meta_columns(&self) -> Vec<String> {
        let mut seen = indexmap::IndexSet::new();
        for r in &self.rows {
            for k in r.meta.keys() {
                if !seen.contains(k.as_str()) {
                    seen.insert(k.clone());
                }
            }
        }
        seen.into_iter().collect()
    }

    /// Sorted metric column names.
    pub fn metric_columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = self
            .rows
            .iter()
            .flat_map(|r| r.metrics.keys().cloned())
            .collect();
        cols.sort();
        cols.dedup();
        cols
    }

    pub fn columns(&self) -> Vec<String> {
        let mut c = self.meta_columns();
        c.extend(self.metric_columns());
        c
    }

    pub fn meta(&self, row: usize, column: &str) -> Option<&Scalar> {
        self.rows.get(row)?.meta.get(column)
    }

    pub fn cell(&self, row: usize, column: &str) -> Cell<'_> {
        let Some(r) = self.rows.get(row) else {
            return Cell::Absent;
        };
        if let Some(v) = r.meta.get(column) {
            Cell::Meta(v)
        } else if r.metrics.contains_key(column) {
            Cell::Lazy
        } else {
            Cell::Absent
        }
    }

    /// The full sequence of a metric for one run, in logging order. The
    /// first access to a run's log file reads it; later ones are cached.
    pub fn get_metric(&self, row: usize, column: &str) -> Result<Vec<MetricValue>> {
        let r = &self.rows[row];
        let Some((log, key)) = r.metrics.get(column) else {
            return Err(ReaderError::MissingMetric {
                run: r.id,
                column: column.to_string(),
            });
        };
        let data = self.store.log(r, log)?;
        Ok(data.lines.iter().filter_map(|l| l.get(key).copied()).collect())
    }

    fn is_metric_column(&self, column: &str) -> bool {
        self.rows.iter().any(|r| r.metrics.contains_key(column))
    }

    fn is_meta_column(&self, column: &str) -> bool {
        self.rows.iter().any(|r| r.meta.contains_key(column))
    }

    /// Partitions rows by the values of `keys`, groups in order of first
    /// appearance. Metric columns stay unloaded.
    pub fn group_by<S: AsRef<str>>(&self, keys: &[S]) -> Result<GroupedFrames> {
        let keys: Vec<String> = keys.iter().map(|k| k.as_ref().to_string()).collect();
        if !self.rows.is_empty() {
            for k in &keys {
                if self.is_meta_column(k) {
                    continue;
                }
                return Err(if self.is_metric_column(k) {
                    ReaderError::NonMetadataGroupKey(k.clone())
                } else {
                    ReaderError::UnknownColumn(k.clone())
                });
            }
        }
        let mut groups: Vec<(GroupKey, Vec<Arc<RunRow>>)> = Vec::new();
        for r in &self.rows {
            let tuple: Vec<Option<Scalar>> = keys.iter().map(|k| r.meta.get(k).cloned()).collect();
            match groups.iter_mut().find(|(t, _)| same_tuple(t, &tuple)) {
                Some((_, rows)) => rows.push(Arc::clone(r)),
                None => groups.push((tuple, vec![Arc::clone(r)])),
            }
        }
        Ok(GroupedFrames {
            keys,
            groups: groups
                .into_iter()
                .map(|(t, rows)| (t, ResultFrame::new(Arc::clone(&self.store), rows)))
                .collect(),
        })
    }

    /// Config columns whose values differ across the frame, absence being a
    /// value of its own.
    pub fn diff(&self) -> Result<DiffTable> {
        if self.rows.is_empty() {
            return Err(ReaderError::EmptyFrame);
        }
        let mut entries = Vec::new();
        for col in self.meta_columns() {
            if !col.starts_with("config.") {
                continue;
            }
            let values: Vec<Option<Scalar>> =
                self.rows.iter().map(|r| r.meta.get(&col).cloned()).collect();
            let first = &values[0];
            if values.iter().any(|v| !same_value(v, first)) {
                entries.push((col, values));
            }
        }
        Ok(DiffTable {
            run_ids: self.run_ids(),
            entries,
        })
    }

    /// Run id, metadata and metric columns. Metrics are loaded when
    /// `materialize` is set and shown as LAZYDATA otherwise; CSV export uses
    /// `include_metrics = false`.
    pub fn to_table(&self, include_metrics: bool, materialize: bool) -> Result<Table> {
        let meta_cols = self.meta_columns();
        let metric_cols = if include_metrics {
            self.metric_columns()
        } else {
            Vec::new()
        };
        let mut columns = vec!["run_id".to_string()];
        columns.extend(meta_cols.iter().cloned());
        columns.extend(metric_cols.iter().cloned());
        let mut rows = Vec::with_capacity(self.rows.len());
        for (i, r) in self.rows.iter().enumerate() {
            let mut row = vec![Value::Scalar(Scalar::Int(r.id.0 as i64))];
            row.extend(meta_cols.iter().map(|c| Value::from(r.meta.get(c))));
            for c in &metric_cols {
                row.push(if !r.metrics.contains_key(c) {
                    Value::Absent
                } else if materialize {
                    Value::Series(self.get_metric(i, c)?)
                } else {
                    Value::Lazy
                });
            }
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }

    pub fn to_csv(&self) -> String {
        self.to_table(false, false)
            .expect("no metric reads without materialize")
            .to_csv()
    }

    /// Full export with every metric loaded.
    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(self.to_table(true, true)?.to_json())
    }
}

impl fmt::Display for ResultFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self
            .to_table(true, false)
            .expect("no metric reads without materialize");
        write!(f, "{t}")
    }
}

pub(crate) fn same_value(a: &Option<Scalar>, b: &Option<Scalar>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x.loose_eq(y),
        (None, None) => true,
        _ => false,
    }
}

fn same_tuple(a: &[Option<Scalar>], b: &[Option<Scalar>]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| same_value(x, y))
}

/// Values of the group keys for one group; `None` where a run lacks the key.
pub type GroupKey = Vec<Option<Scalar>>;

/// Frames keyed by the tuple of group-key values.
#[derive(Debug, Clone)]
pub struct GroupedFrames {
    pub keys: Vec<String>,
    pub groups: Vec<(GroupKey, ResultFrame)>,
}

impl GroupedFrames {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn get(&self, tuple: &[Scalar]) -> Option<&ResultFrame> {
        let wanted: Vec<Option<Scalar>> = tuple.iter().cloned().map(Some).collect();
        self.groups
            .iter()
            .find(|(t, _)| same_tuple(t, &wanted))
            .map(|(_, f)| f)
    }

    /// Group keys first, then each member row; metrics shown as LAZYDATA.
    pub fn to_table(&self) -> Table {
        let mut columns = self.keys.clone();
        columns.push("run_id".into());
        let mut meta_cols: Vec<String> = Vec::new();
        let mut metric_cols: Vec<String> = Vec::new();
        for (_, f) in &self.groups {
            for c in f.meta_columns() {
                if !self.keys.contains(&c) && !meta_cols.contains(&c) {
                    meta_cols.push(c);
                }
            }
            for c in f.metric_columns() {
                if !metric_cols.contains(&c) {
                    metric_cols.push(c);
                }
            }
        }
        metric_cols.sort();
        columns.extend(meta_cols.iter().cloned());
        columns.extend(metric_cols.iter().cloned());
        let mut rows = Vec::new();
        for (tuple, f) in &self.groups {
            for (i, r) in f.rows.iter().enumerate() {
                let mut row: Vec<Value> = if i == 0 {
                    tuple.iter().map(|v| Value::from(v.as_ref())).collect()
                } else {
                    vec![Value::Absent; tuple.len()]
                };
                row.push(Value::Scalar(Scalar::Int(r.id.0 as i64)));
                row.extend(meta_cols.iter().map(|c| Value::from(r.meta.get(c))));
                row.extend(metric_cols.iter().map(|c| {
                    if r.metrics.contains_key(c) {
                        Value::Lazy
                    } else {
                        Value::Absent
                    }
                }));
                rows.push(row);
            }
        }
        Table { columns, rows }
    }
}

impl fmt::Display for GroupedFrames {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_table())
    }
}

/// Config keys that vary across a frame, with each run's value.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffTable {
    pub run_ids: Vec<RunId>,
    pub entries: Vec<(String, Vec<Option<Scalar>>)>,
}

impl DiffTable {
    pub fn keys(&self) -> Vec<&str> {
        self.entries.iter().map(|(k, _)| k.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One row per run: its id followed by the varying keys.
    pub fn to_table(&self) -> Table {
        let mut columns = vec!["run_id".to_string()];
        columns.extend(self.entries.iter().map(|(k, _)| k.clone()));
        let rows = self
            .run_ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let mut row = vec![Value::Scalar(Scalar::Int(id.0 as i64))];
                row.extend(self.entries.iter().map(|(_, v)| Value::from(v[i].as_ref())));
                row
            })
            .collect();
        Table { columns, rows }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{fixture, Reader};
    use super::*;
    use std::fs;

    #[test]
    fn group_by_lr_keeps_metrics_lazy() {
        let dir = tempfile::tempdir().unwrap();
        fixture::four_runs(dir.path());
        let reader = Reader::open(dir.path()).unwrap();
        let res = reader
            .filter("info.status == 'COMPLETE' & config.optimizer.lr <= 1.")
            .unwrap();
        let g = res.group_by(&["config.optimizer.lr"]).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.groups[0].0, vec![Some(Scalar::Float(1.0))]);
        assert_eq!(g.groups[0].1.len(), 2);
        assert!(g.to_string().contains("LAZYDATA"));
        assert_eq!(reader.metric_reads(), 0);
        assert!(matches!(
            res.group_by(&["train.loss"]),
            Err(ReaderError::NonMetadataGroupKey(_))
        ));
        let all = reader.all().group_by::<&str>(&[]).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all.groups[0].1.len(), 4);
    }

    #[test]
    fn groups_partition_in_first_appearance_order() {
        let dir = tempfile::tempdir().unwrap();
        fixture::four_runs(dir.path());
        let reader = Reader::open(dir.path()).unwrap();
        let g = reader.all().group_by(&["config.seed"]).unwrap();
        let tuples: Vec<_> = g.groups.iter().map(|(t, _)| t[0].clone().unwrap()).collect();
        assert_eq!(tuples, vec![Scalar::Int(0), Scalar::Int(1)]);
        let mut ids: Vec<u64> = g
            .groups
            .iter()
            .flat_map(|(_, f)| f.run_ids())
            .map(|i| i.0)
            .collect();
        ids.sort();
        assert_eq!(ids, vec![1, 2, 3, 4]);
    }

    #[test]
    fn diff_reports_varying_config() {
        let dir = tempfile::tempdir().unwrap();
        fixture::four_runs(dir.path());
        let reader = Reader::open(dir.path()).unwrap();
        let d = reader.all().diff().unwrap();
        assert_eq!(d.keys(), vec!["config.seed", "config.optimizer.lr"]);
        let one = reader.filter("config.seed == 0 & config.optimizer.lr == 1").unwrap();
        assert!(one.diff().unwrap().is_empty());
        assert!(matches!(
            reader.filter("config.seed == 7").unwrap().diff(),
            Err(ReaderError::EmptyFrame)
        ));
        // A key present in only some runs counts as varying.
        let cfg = dir.path().join("4/metadata/config.yaml");
        let text = fs::read_to_string(&cfg).unwrap();
        fs::write(&cfg, format!("{text}extra: 1\n")).unwrap();
        let reader = Reader::open(dir.path()).unwrap();
        let same_seed = reader.filter("config.seed == 1").unwrap();
        assert_eq!(
            same_seed.diff().unwrap().keys(),
            vec!["config.optimizer.lr", "config.extra"]
        );
    }

    #[test]
    fn display_and_exports() {
        let dir = tempfile::tempdir().unwrap();
        fixture::four_runs(dir.path());
        let reader = Reader::open(dir.path()).unwrap();
        let res = reader.filter("config.optimizer.lr == 1.").unwrap();
        let text = res.to_string();
        assert!(text.lines().next().unwrap().starts_with("run_id  config.seed"));
        assert_eq!(text.matches("LAZYDATA").count(), 4);
        let csv = res.to_csv();
        assert!(!csv.contains("train."));
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(reader.metric_reads(), 0);
        let json = res.to_json().unwrap();
        assert_eq!(json[0]["train.iter"].as_array().unwrap().len(), 10);
        assert_eq!(reader.metric_reads(), 2);
        assert!(matches!(
            res.get_metric(0, "eval.loss"),
            Err(ReaderError::MissingMetric { .. })
        ));
    }
}
