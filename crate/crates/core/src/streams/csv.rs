use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::obs::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

/// Column layout of a CSV stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Label column, by header name or zero-based index.
    pub label: String,
    /// Feature columns by name or index; empty means every other column.
    #[serde(default)]
    pub features: Vec<String>,
    pub task: Task,
    #[serde(default = "yes")]
    pub header: bool,
    /// Class names in index order, for non-integer labels.
    #[serde(default)]
    pub label_map: Vec<String>,
}

fn yes() -> bool {
    true
}

impl CsvSchema {
    pub fn new(label: impl Into<String>, task: Task) -> Self {
        Self {
            label: label.into(),
            features: Vec::new(),
            task,
            header: true,
            label_map: Vec::new(),
        }
    }
}

fn resolve(col: &str, names: &[String]) -> Option<usize> {
    names
        .iter()
        .position(|n| n == col)
        .or_else(|| col.parse::<usize>().ok().filter(|&i| i < names.len()))
}

/// Read a stream in file order. Errors name the offending line.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<Observation>> {
    let shown = path.display().to_string();
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: shown.clone(),
        line: line as usize,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let names: Vec<String> = if schema.header {
        rdr.headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };

    let mut out = Vec::new();
    let mut cols: Option<(usize, Vec<usize>)> = None;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(i as u64 + 1, |p| p.line());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let (label_col, feat_cols) = match &cols {
            Some(c) => c,
            None => {
                let names: Vec<String> = if names.is_empty() {
                    (0..rec.len()).map(|j| j.to_string()).collect()
                } else {
                    names.clone()
                };
                let lc = resolve(&schema.label, &names).ok_or_else(|| {
                    Error::InvalidConfig(format!("label column {:?} not found", schema.label))
                })?;
                let fc = if schema.features.is_empty() {
                    (0..names.len()).filter(|&j| j != lc).collect()
                } else {
                    schema
                        .features
                        .iter()
                        .map(|f| {
                            resolve(f, &names).ok_or_else(|| {
                                Error::InvalidConfig(format!("feature column {f:?} not found"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?
                };
                cols.insert((lc, fc))
            }
        };
        let field = |j: usize| -> Result<&str> {
            rec.get(j)
                .ok_or_else(|| parse_err(line, format!("missing column {j}")))
        };
        let mut x = Vec::with_capacity(feat_cols.len());
        for &j in feat_cols.iter() {
            let s = field(j)?;
            let v: f64 = s
                .parse()
                .map_err(|_| parse_err(line, format!("column {j}: {s:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {j}: non-finite value")));
            }
            x.push(v);
        }
        let raw = field(*label_col)?;
        let t = out.len() as u64;
        let obs = match schema.task {
            Task::Regression => {
                let y: f64 = raw
                    .parse()
                    .map_err(|_| parse_err(line, format!("label {raw:?} is not a number")))?;
                Observation::regression(x, y, t)
            }
            Task::Classification => {
                let c = if schema.label_map.is_empty() {
                    raw.parse::<u32>()
                        .map_err(|_| parse_err(line, format!("label {raw:?} is not a class index")))?
                } else {
                    schema
                        .label_map
                        .iter()
                        .position(|m| m == raw)
                        .ok_or_else(|| parse_err(line, format!("label {raw:?} not in label_map")))?
                        as u32
                };
                Observation::classification(x, c, t)
            }
        };
        out.push(obs);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_classification_with_map() {
        let f = write("a,b,class\n1,2,UP\n3,4,DOWN\n");
        let mut s = CsvSchema::new("class", Task::Classification);
        s.label_map = vec!["DOWN".into(), "UP".into()];
        let obs = load_csv(f.path(), &s).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[0].x, vec![1.0, 2.0]);
        assert_eq!(obs[0].y.class(), Some(1));
        assert_eq!(obs[1].t, 1);
    }

    #[test]
    fn malformed_row_names_its_line() {
        let f = write("a,y\n1,2\n3,4\nfoo,5\n");
        let err = load_csv(f.path(), &CsvSchema::new("y", Task::Regression)).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn headerless_by_index() {
        let f = write("1,0.5,7\n2,0.25,8\n");
        let mut s = CsvSchema::new("2", Task::Regression);
        s.header = false;
        s.features = vec!["1".into()];
        let obs = load_csv(f.path(), &s).unwrap();
        assert_eq!(obs[1].x, vec![0.25]);
        assert_eq!(obs[1].y.as_f64(), 8.0);
    }

    #[test]
    fn unknown_label_column() {
        let f = write("a,b\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), &CsvSchema::new("zzz", Task::Regression)),
            Err(Error::InvalidConfig(_))
        ));
    }
}
