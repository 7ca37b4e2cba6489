use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};

/// Read one beat per row: `sample_len` real columns followed by an integer label.
///
/// Row numbers in errors count data rows from 1; line numbers count physical
/// lines of the file.
pub fn load_csv(path: &Path, sample_len: usize, num_classes: usize, has_header: bool) -> Result<LabeledDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(row, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(row, |p| p.line() as usize);
        if record.len() != sample_len + 1 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} columns, found {}", sample_len + 1, record.len()),
            });
        }
        for field in record.iter().take(sample_len) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                message: format!("not a number: {field:?}"),
            })?;
            features.push(v);
        }
        let raw = &record[sample_len];
        let label: usize = raw.parse().map_err(|_| Error::Parse {
            line,
            message: format!("label is not a nonnegative integer: {raw:?}"),
        })?;
        if label >= num_classes {
            return Err(Error::Validation {
                row,
                message: format!("label {label} outside [0, {num_classes})"),
            });
        }
        labels.push(label);
    }
    LabeledDataset::new(features, labels, sample_len, num_classes)
}

/// Write a dataset in the format read by [`load_csv`].
pub fn save_csv(data: &LabeledDataset, path: &Path, header: bool) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut out = std::io::BufWriter::new(file);
    if header {
        let cols: Vec<String> = (0..data.sample_len()).map(|i| format!("x{i}")).collect();
        writeln!(out, "{},label", cols.join(",")).map_err(io)?;
    }
    for i in 0..data.len() {
        let mut line = String::new();
        for v in data.sample(i) {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&data.label(i).to_string());
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}
