//! CSV readers and writers shared by the library and the command line.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::DataMatrix;

/// Reads a headered CSV. With `columns = None` every column is loaded; otherwise
/// only the named columns, in the given order. Also returns the full header.
pub fn read_numeric_csv(path: &Path, columns: Option<&[String]>) -> Result<(DataMatrix, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv { path: path.into(), source })?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|source| Error::Csv { path: path.into(), source })?
        .iter()
        .map(str::to_string)
        .collect();
    let picked: Vec<usize> = match columns {
        None => (0..header.len()).collect(),
        Some(names) => names
            .iter()
            .map(|name| header.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.clone())))
            .collect::<Result<_>>()?,
    };
    let mut values = Vec::new();
    let mut n = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|source| Error::Csv { path: path.into(), source })?;
        for &j in &picked {
            let cell = record.get(j).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row: row + 1,
                column: header[j].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col: j });
            }
            values.push(v);
        }
        n += 1;
    }
    let names = picked.iter().map(|&j| header[j].clone()).collect();
    let data = DataMatrix::new(n, picked.len(), values)?.with_columns(names)?;
    Ok((data, header))
}

/// Reads a single column as strings.
pub fn read_string_column(path: &Path, column: &str) -> Result<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| Error::Csv { path: path.into(), source })?;
    let j = reader
        .headers()
        .map_err(|source| Error::Csv { path: path.into(), source })?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::MissingColumn(column.to_string()))?;
    reader
        .records()
        .map(|r| {
            r.map(|rec| rec.get(j).unwrap_or("").to_string()).map_err(|source| Error::Csv { path: path.into(), source })
        })
        .collect()
}

pub fn write_data_csv(data: &DataMatrix, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(data.columns())?;
    for row in data.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `text` to `path`, attaching the path to any I/O error.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
