use crate::config::Scalar;
use crate::runstore::{MetricValue, RunId};

use super::{GroupedFrames, ReaderError, ResultFrame, Result, Table, Value};

/// A reduction applied to one column of every group.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggregationMap {
    /// Mean and population standard deviation, as `<col>_avg` and
    /// `<col>_std`. Sequences are reduced element-wise.
    AvgStd(String),
}

impl AggregationMap {
    pub fn avg_std(column: impl Into<String>) -> Self {
        AggregationMap::AvgStd(column.into())
    }

    pub fn input_column(&self) -> &str {
        match self {
            AggregationMap::AvgStd(c) => c,
        }
    }

    pub fn output_columns(&self) -> Vec<String> {
        match self {
            AggregationMap::AvgStd(c) => vec![format!("{c}_avg"), format!("{c}_std")],
        }
    }
}

/// Mean and ddof-0 standard deviation. The mean is taken relative to the
/// first sample so identical inputs give that value back exactly.
pub(crate) fn avg_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let x0 = xs[0];
    let mean = x0 + xs.iter().map(|x| x - x0).sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

enum Column {
    Scalars(Vec<f64>),
    Series(Vec<Vec<f64>>),
}

fn collect(frame: &ResultFrame, column: &str) -> Result<Column> {
    let mut scalars = Vec::new();
    let mut series: Vec<(RunId, Vec<f64>)> = Vec::new();
    for (i, r) in frame.rows().iter().enumerate() {
        if let Some(v) = r.meta.get(column) {
            match v {
                Scalar::Int(_) | Scalar::Float(_) if series.is_empty() => {
                    scalars.push(v.as_f64().expect("number"))
                }
                Scalar::Int(_) | Scalar::Float(_) => {
                    return Err(ReaderError::MissingColumnInGroup {
                        column: column.to_string(),
                        run: r.id,
                    })
                }
                _ => {
                    return Err(ReaderError::NonNumeric {
                        column: column.to_string(),
                        run: r.id,
                    })
                }
            }
        } else if r.metrics.contains_key(column) && scalars.is_empty() {
            let seq = frame.get_metric(i, column)?;
            series.push((r.id, seq.into_iter().map(MetricValue::as_f64).collect()));
        } else {
            return Err(ReaderError::MissingColumnInGroup {
                column: column.to_string(),
                run: r.id,
            });
        }
    }
    if !scalars.is_empty() {
        return Ok(Column::Scalars(scalars));
    }
    let len = series.first().map_or(0, |(_, s)| s.len());
    if series.iter().any(|(_, s)| s.len() != len) {
        return Err(ReaderError::LengthMismatch {
            column: column.to_string(),
            lengths: series.iter().map(|(id, s)| (*id, s.len())).collect(),
        });
    }
    Ok(Column::Series(series.into_iter().map(|(_, s)| s).collect()))
}

fn floats(v: Vec<f64>) -> Value {
    Value::Series(v.into_iter().map(MetricValue::Float).collect())
}

impl GroupedFrames {
    /// One row per group: the group keys followed by each map's outputs.
    /// Loads every metric the maps read.
    pub fn aggregate(&self, maps: &[AggregationMap]) -> Result<Table> {
        let mut columns = self.keys.clone();
        for m in maps {
            columns.extend(m.output_columns());
        }
        let mut rows = Vec::with_capacity(self.groups.len());
        for (tuple, frame) in &self.groups {
            let mut row: Vec<Value> = tuple.iter().map(|v| Value::from(v.as_ref())).collect();
            for m in maps {
                match m {
                    AggregationMap::AvgStd(col) => match collect(frame, col)? {
                        Column::Scalars(xs) => {
                            let (a, s) = avg_std(&xs);
                            row.push(Value::Scalar(Scalar::Float(a)));
                            row.push(Value::Scalar(Scalar::Float(s)));
                        }
                        Column::Series(seqs) => {
                            let len = seqs[0].len();
                            let (mut avg, mut std) = (Vec::with_capacity(len), Vec::with_capacity(len));
                            let mut column = Vec::with_capacity(seqs.len());
                            for j in 0..len {
                                column.clear();
                                column.extend(seqs.iter().map(|s| s[j]));
                                let (a, s) = avg_std(&column);
                                avg.push(a);
                                std.push(s);
                            }
                            row.push(floats(avg));
                            row.push(floats(std));
                        }
                    },
                }
            }
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }
}
