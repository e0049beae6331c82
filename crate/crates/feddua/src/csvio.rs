//! Tabular dataset files: UTF-8, comma separated, header `f0,...,fK,label`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use feddua_core::datagen::Dataset;

use crate::error::{HarnessError, Result};

/// Read a dataset. Row order is preserved; the class count is one more than
/// the largest label (at least 2).
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| HarnessError::parse(path, 1, e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(HarnessError::parse(path, 1, "empty file"));
    }
    let width = headers.len() - 1;
    let expected_header = (0..width).all(|i| headers[i].trim() == format!("f{i}")) && headers[width].trim() == "label";
    if width == 0 || !expected_header {
        return Err(HarnessError::parse(path, 1, "header must be f0,...,fK,label"));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            HarnessError::parse(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width + 1 {
            return Err(HarnessError::parse(
                path,
                line,
                format!("expected {} fields, found {}", width + 1, record.len()),
            ));
        }
        for (i, field) in record.iter().take(width).enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| HarnessError::parse(path, line, format!("feature f{i} is not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(HarnessError::parse(path, line, format!("feature f{i} is not finite")));
            }
            features.push(v);
        }
        let label: usize = record[width].trim().parse().map_err(|_| {
            HarnessError::parse(
                path,
                line,
                format!("label is not a non-negative integer: {:?}", &record[width]),
            )
        })?;
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(HarnessError::parse(path, 1, "no data rows"));
    }
    let num_classes = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Dataset::new(features, labels, width, num_classes, name)?)
}

/// Write a dataset in the same format. Floats use Rust's shortest
/// round-trip formatting, so `load_csv(write_csv(ds))` is exact.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..ds.input_dim()).map(|i| format!("f{i}")).collect();
    out.push_str(&header.join(","));
    out.push_str(",label\n");
    for i in 0..ds.len() {
        for v in ds.row(i) {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{}\n", ds.label(i)));
    }
    let mut f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| HarnessError::io(path, e))
}
