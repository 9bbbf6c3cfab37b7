//! CSV datasets: a header row, a `label` column with classes `1..I`, and
//! numeric feature columns. An optional `# classes: I` comment fixes the
//! class count; otherwise it is the largest label.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::Dataset;

pub const LABEL_COLUMN: &str = "label";

/// Parsed CSV contents before they are turned into a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub feature_names: Vec<String>,
    pub features: Array2<f64>,
    /// One-based labels, when the file has a label column.
    pub labels: Option<Vec<usize>>,
    pub classes_directive: Option<usize>,
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn classes_directive(path: &Path, text: &str) -> Result<Option<usize>> {
    for (i, line) in text.lines().enumerate() {
        let Some(comment) = line.trim_start().strip_prefix('#') else {
            continue;
        };
        let Some((key, value)) = comment.split_once(':') else {
            continue;
        };
        if key.trim() == "classes" {
            let n = value.trim().parse::<usize>().map_err(|_| {
                parse_error(path, i as u64 + 1, format!("bad class count {:?}", value.trim()))
            })?;
            return Ok(Some(n));
        }
    }
    Ok(None)
}

pub fn read_table(path: &Path, require_label: bool) -> Result<Table> {
    let text = fs::read_to_string(path)?;
    let directive = classes_directive(path, &text)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    let label_idx = headers.iter().position(|h| h == LABEL_COLUMN);
    if require_label && label_idx.is_none() {
        return Err(parse_error(path, 1, "missing `label` column"));
    }
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| Some(i) != label_idx).collect();
    let feature_names: Vec<String> = feature_cols.iter().map(|&i| headers[i].to_string()).collect();
    if feature_names.is_empty() {
        return Err(parse_error(path, 1, "no feature columns"));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if let Some(li) = label_idx {
            let cell = &record[li];
            let label: i64 = cell
                .parse()
                .map_err(|_| parse_error(path, line, format!("label {cell:?} is not an integer")))?;
            if label < 1 {
                return Err(parse_error(path, line, format!("label {label} must be >= 1")));
            }
            if let Some(classes) = directive {
                if label as usize > classes {
                    return Err(parse_error(
                        path,
                        line,
                        format!("label {label} exceeds declared class count {classes}"),
                    ));
                }
            }
            labels.push(label as usize);
        }
        for (&c, name) in feature_cols.iter().zip(&feature_names) {
            let cell = &record[c];
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_error(path, line, format!("feature {name}: {cell:?} is not a number")))?;
            if !v.is_finite() {
                return Err(parse_error(
                    path,
                    line,
                    format!("feature {name}: non-finite value"),
                ));
            }
            values.push(v);
        }
        rows += 1;
    }
    let features = Array2::from_shape_vec((rows, feature_names.len()), values)
        .expect("every row has one value per feature");
    Ok(Table {
        feature_names,
        features,
        labels: label_idx.map(|_| labels),
        classes_directive: directive,
    })
}

/// Reads a labelled dataset; labels become zero-based.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let table = read_table(path, true)?;
    let labels = table.labels.expect("label column required");
    if labels.is_empty() {
        return Err(parse_error(path, 2, "no data rows"));
    }
    let classes = table
        .classes_directive
        .unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0));
    if classes < 2 {
        return Err(parse_error(
            path,
            1,
            format!("need at least 2 classes, found {classes}"),
        ));
    }
    Dataset::new(
        table.features,
        labels.into_iter().map(|l| l - 1).collect(),
        classes,
        table.feature_names,
    )
}

/// Writes `dataset` with a `# classes:` directive and one-based labels.
pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    writeln!(out, "# classes: {}", dataset.num_classes())?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![LABEL_COLUMN.to_string()];
    header.extend(dataset.feature_names().iter().cloned());
    w.write_record(&header)?;
    for (row, &label) in dataset.features().rows().into_iter().zip(dataset.labels()) {
        let mut record = vec![(label + 1).to_string()];
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
