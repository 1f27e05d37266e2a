use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Serializes records as CSV with a header row taken from the field names.
pub fn csv_bytes<S: Serialize>(rows: &[S]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

/// Explicit header plus string cells, for tables whose columns are only
/// known at run time.
pub fn table_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::invalid(format!(
                "row has {} cells, header has {}",
                row.len(),
                header.len()
            )));
        }
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

pub fn write_csv<S: Serialize>(rows: &[S], path: &Path) -> Result<()> {
    fs::write(path, csv_bytes(rows)?).map_err(|e| Error::io(path, e))
}

pub fn write_table(header: &[&str], rows: &[Vec<String>], path: &Path) -> Result<()> {
    fs::write(path, table_bytes(header, rows)?).map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}
