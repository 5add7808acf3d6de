//! CSV ingestion. Classification files hold one sample per row with the
//! label first; forecasting files hold a single column.

use std::io::{Read, Write};
use std::path::Path;

use tsxil_core::data::ClassificationDataset;

use crate::error::{Error, Result};

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(input)
}

fn csv_error(e: csv::Error, row: usize) -> Error {
    Error::Parse { row, col: 0, message: e.to_string() }
}

fn number(cell: &str, row: usize, col: usize) -> Result<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse { row, col, message: format!("{cell:?} is not a finite number") })
}

/// Parses a classification CSV. Rows and columns in errors are 1-based.
pub fn read_classification<R: Read>(name: &str, input: R) -> Result<ClassificationDataset> {
    let mut series = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader(input).records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_error(e, row))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let mut cells = record.iter();
        let label = cells.next().unwrap_or_default();
        if label.is_empty() {
            return Err(Error::Parse { row, col: 1, message: "missing label".into() });
        }
        labels.push(label.to_string());
        series.push(cells.enumerate().map(|(j, c)| number(c, row, j + 2)).collect::<Result<Vec<_>>>()?);
    }
    if series.iter().any(Vec::is_empty) {
        return Err(Error::Invalid("every row needs at least one value after the label".into()));
    }
    Ok(ClassificationDataset::from_raw_labels(name, series, &labels)?)
}

/// Parses a single-column series.
pub fn read_series<R: Read>(input: R) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (i, record) in reader(input).records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_error(e, row))?;
        match record.len() {
            0 => continue,
            1 if record[0].is_empty() => continue,
            1 => values.push(number(&record[0], row, 1)?),
            n => return Err(Error::Parse { row, col: 2, message: format!("expected a single column, found {n}") }),
        }
    }
    if values.is_empty() {
        return Err(tsxil_core::Error::EmptyDataset.into());
    }
    Ok(values)
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
}

pub fn load_classification(path: &Path) -> Result<ClassificationDataset> {
    read_classification(&stem(path), open(path)?)
}

pub fn load_series(path: &Path) -> Result<Vec<f64>> {
    read_series(open(path)?)
}

/// Writes labels by their original names, so a load round-trips.
pub fn write_classification<W: Write>(dataset: &ClassificationDataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (x, &y) in dataset.series.iter().zip(&dataset.labels) {
        let label = dataset.header.label_names.get(y).cloned().unwrap_or_else(|| y.to_string());
        let mut row = vec![label];
        row.extend(x.iter().map(|v| format!("{v:?}")));
        w.write_record(&row).map_err(|e| csv_error(e, 0))?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))
}

pub fn write_series<W: Write>(values: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for v in values {
        w.write_record([format!("{v:?}")]).map_err(|e| csv_error(e, 0))?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))
}
