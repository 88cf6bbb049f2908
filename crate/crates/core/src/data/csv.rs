use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{minmax_scale, Dataset};
use crate::error::{Error, Result};

const OP: &str = "data::load_csv";

/// Which column holds the integer label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl Default for LabelColumn {
    fn default() -> Self {
        LabelColumn::Index(0)
    }
}

/// Tabular data: one integer label column, every other column a feature.
/// Features are min-max scaled to [0, 1].
pub fn read_csv<R: Read>(
    input: R,
    label: &LabelColumn,
    has_header: bool,
    source: &str,
) -> Result<Dataset> {
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(::csv::Trim::All)
        .from_reader(input);
    let parse = |line: usize, msg: String| Error::Parse {
        op: OP,
        path: source.to_string(),
        line,
        msg,
    };
    let label_idx = match label {
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(name) => {
            if !has_header {
                return Err(Error::invalid_spec(OP, "a named label column needs a header row"));
            }
            let headers = reader.headers().map_err(|e| parse(1, e.to_string()))?;
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| parse(1, format!("no column named {name:?}")))?
        }
    };

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (row, record) in reader.records().enumerate() {
        let line = row + 1 + usize::from(has_header);
        let record = record.map_err(|e| parse(line, e.to_string()))?;
        if label_idx >= record.len() {
            return Err(parse(line, format!("label column {label_idx} missing")));
        }
        let dim = record.len() - 1;
        match width {
            None => width = Some(dim),
            Some(w) if w != dim => {
                return Err(parse(line, format!("expected {} fields, found {}", w + 1, dim + 1)))
            }
            _ => {}
        }
        for (j, field) in record.iter().enumerate() {
            if j == label_idx {
                let y: usize = field
                    .parse()
                    .map_err(|_| parse(line, format!("label {field:?} is not a non-negative integer")))?;
                labels.push(y);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse(line, format!("feature {field:?} is not a number")))?;
                if !v.is_finite() {
                    return Err(parse(line, format!("feature {field:?} is not finite")));
                }
                values.push(v);
            }
        }
    }
    let dim = width.ok_or_else(|| Error::invalid_input(OP, format!("{source}: no data rows")))?;
    if dim == 0 {
        return Err(Error::invalid_input(OP, format!("{source}: no feature columns")));
    }
    let mut features = Array2::from_shape_vec((labels.len(), dim), values)
        .map_err(|e| Error::invalid_input(OP, e.to_string()))?;
    minmax_scale(&mut features);
    let class_count = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(features, Some(labels), class_count, format!("csv:{source}"))
}

pub fn load_csv(path: &Path, label: &LabelColumn, has_header: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(OP, path, e))?;
    read_csv(file, label, has_header, &path.display().to_string())
}
