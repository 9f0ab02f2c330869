use std::fmt;

use crate::config::{format_float, Scalar};
use crate::runstore::MetricValue;

/// A cell of an output table.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Absent,
    /// A metric that has not been loaded.
    Lazy,
    Scalar(Scalar),
    Series(Vec<MetricValue>),
}

impl Value {
    fn series_text(v: &[MetricValue], abbreviate: bool) -> String {
        let item = |m: &MetricValue| match *m {
            MetricValue::Int(i) => i.to_string(),
            MetricValue::Float(f) => format_float(f),
        };
        if abbreviate && v.len() > 6 {
            let head: Vec<String> = v[..3].iter().map(item).collect();
            format!("[{}, ..., {}]", head.join(", "), item(&v[v.len() - 1]))
        } else {
            let all: Vec<String> = v.iter().map(item).collect();
            format!("[{}]", all.join(", "))
        }
    }

    /// Text used in tables; long series are shortened.
    pub fn display_text(&self) -> String {
        match self {
            Value::Absent => "-".to_string(),
            Value::Lazy => "LAZYDATA".to_string(),
            Value::Scalar(s) => s.to_string(),
            Value::Series(v) => Value::series_text(v, true),
        }
    }

    /// Text used in CSV; nothing is shortened.
    pub fn csv_text(&self) -> String {
        match self {
            Value::Absent => String::new(),
            Value::Lazy => "LAZYDATA".to_string(),
            Value::Scalar(s) => s.to_string(),
            Value::Series(v) => Value::series_text(v, false),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as J;
        let num = |f: f64| serde_json::Number::from_f64(f).map_or(J::Null, J::Number);
        match self {
            Value::Absent => J::Null,
            Value::Lazy => J::String("LAZYDATA".into()),
            Value::Scalar(s) => match s {
                Scalar::Null => J::Null,
                Scalar::Bool(b) => J::Bool(*b),
                Scalar::Int(i) => J::from(*i),
                Scalar::Float(f) => num(*f),
                Scalar::Text(t) => J::String(t.clone()),
            },
            Value::Series(v) => J::Array(
                v.iter()
                    .map(|m| match *m {
                        MetricValue::Int(i) => J::from(i),
                        MetricValue::Float(f) => num(f),
                    })
                    .collect(),
            ),
        }
    }
}

impl From<Option<&Scalar>> for Value {
    fn from(s: Option<&Scalar>) -> Self {
        s.map_or(Value::Absent, |s| Value::Scalar(s.clone()))
    }
}

/// Rectangular output with named columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn get(&self, row: usize, column: &str) -> Option<&Value> {
        self.rows.get(row)?.get(self.column(column)?)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Value::csv_text))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    /// An array of objects, one per row, keys in column order. Absent cells
    /// are omitted.
    pub fn to_json(&self) -> serde_json::Value {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut obj = serde_json::Map::new();
                for (c, v) in self.columns.iter().zip(row) {
                    if *v != Value::Absent {
                        obj.insert(c.clone(), v.to_json());
                    }
                }
                serde_json::Value::Object(obj)
            })
            .collect();
        serde_json::Value::Array(rows)
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(Value::display_text).collect())
            .collect();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| {
                cells
                    .iter()
                    .map(|r| r[i].chars().count())
                    .chain(std::iter::once(c.chars().count()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |f: &mut fmt::Formatter<'_>, items: &[String]| -> fmt::Result {
            let parts: Vec<String> = items
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect();
            writeln!(f, "{}", parts.join("  ").trim_end())
        };
        line(f, &self.columns)?;
        for r in &cells {
            line(f, r)?;
        }
        Ok(())
    }
}
