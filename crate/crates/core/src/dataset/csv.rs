//! CSV dataset format.
//!
//! A header row names the columns. Features are `f0..f{k-1}` (decimal floats),
//! the target is `y` and the group `b` (non-negative integers). An optional
//! `id` column carries sample ids; without it ids are the 0-based row index.
//! Files are UTF-8 with LF line endings.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GroupedDataset, Sample};
use crate::error::{Error, Result};

/// Column roles for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub target: String,
    pub group: String,
    /// Feature columns in order. `None` selects every `f<digits>` column in
    /// header order.
    pub features: Option<Vec<String>>,
    /// Id column. `None` uses `id` if present, otherwise the row index.
    pub id: Option<String>,
    pub num_classes: Option<usize>,
    pub num_groups: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            target: "y".into(),
            group: "b".into(),
            features: None,
            id: None,
            num_classes: None,
            num_groups: None,
        }
    }
}

impl CsvSchema {
    pub fn with_shape(num_classes: usize, num_groups: usize) -> Self {
        Self {
            num_classes: Some(num_classes),
            num_groups: Some(num_groups),
            ..Self::default()
        }
    }
}

fn is_feature_column(name: &str) -> bool {
    name.len() > 1 && name.starts_with('f') && name[1..].bytes().all(|c| c.is_ascii_digit())
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<GroupedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = ::csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{}: unknown column `{name}`", path.display())))
    };
    let target_col = column(&schema.target)?;
    let group_col = column(&schema.group)?;
    let id_col = match &schema.id {
        Some(name) => Some(column(name)?),
        None => headers.iter().position(|h| h == "id"),
    };
    let feature_cols = match &schema.features {
        Some(names) => names.iter().map(|n| column(n)).collect::<Result<Vec<_>>>()?,
        None => headers
            .iter()
            .enumerate()
            .filter(|(_, h)| is_feature_column(h))
            .map(|(i, _)| i)
            .collect(),
    };
    if feature_cols.is_empty() {
        return Err(Error::Data(format!("{}: no feature columns", path.display())));
    }

    let row_error = |line: u64, message: String| Error::Row {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(row as u64 + 2, |p| p.line());
            row_error(line, e.to_string())
        })?;
        let line = record.position().map_or(row as u64 + 2, |p| p.line());
        let parse_index = |col: usize, what: &str| -> Result<usize> {
            record[col]
                .trim()
                .parse::<usize>()
                .map_err(|_| row_error(line, format!("invalid {what} `{}`", &record[col])))
        };
        let target = parse_index(target_col, "class index")?;
        let group = parse_index(group_col, "group index")?;
        if let Some(c) = schema.num_classes.filter(|&c| target >= c) {
            return Err(row_error(line, format!("class {target} out of range (C = {c})")));
        }
        if let Some(g) = schema.num_groups.filter(|&g| group >= g) {
            return Err(row_error(line, format!("group {group} out of range (G = {g})")));
        }
        let features = feature_cols
            .iter()
            .map(|&col| {
                let v: f64 = record[col]
                    .trim()
                    .parse()
                    .map_err(|_| row_error(line, format!("invalid number `{}` in `{}`", &record[col], &headers[col])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(row_error(line, format!("non-finite value in `{}`", &headers[col])))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let id = match id_col {
            Some(col) => record[col]
                .trim()
                .parse::<u64>()
                .map_err(|_| row_error(line, format!("invalid id `{}`", &record[col])))?,
            None => row as u64,
        };
        samples.push(Sample {
            id,
            features,
            target,
            group,
        });
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    let num_classes = schema
        .num_classes
        .unwrap_or_else(|| samples.iter().map(|s| s.target).max().unwrap_or(0) + 1);
    let num_groups = schema
        .num_groups
        .unwrap_or_else(|| samples.iter().map(|s| s.group).max().unwrap_or(0) + 1);
    GroupedDataset::with_feature_dim(samples, num_classes, num_groups, feature_cols.len())
}

/// Writes `d` in the format read by [`load_csv`]. The `id` column is emitted
/// only when ids differ from the row index.
pub fn export_csv(d: &GroupedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    write_csv(d, &mut out).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_csv(d: &GroupedDataset, mut w: impl Write) -> std::io::Result<()> {
    let with_id = d.samples().iter().enumerate().any(|(i, s)| s.id != i as u64);
    let mut header: Vec<String> = Vec::new();
    if with_id {
        header.push("id".into());
    }
    header.extend((0..d.feature_dim()).map(|k| format!("f{k}")));
    header.push("y".into());
    header.push("b".into());
    writeln!(w, "{}", header.join(","))?;
    let mut line = String::new();
    for s in d.samples() {
        line.clear();
        if with_id {
            line.push_str(&s.id.to_string());
            line.push(',');
        }
        for v in &s.features {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&format!("{},{}", s.target, s.group));
        writeln!(w, "{line}")?;
    }
    Ok(())
}
