pub mod axes;
pub mod delta;
pub mod losses;
pub mod metrics;
pub mod sample;
pub mod schedule;
pub mod spectra;
pub mod train;

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::{CliError, CliResult};

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        CliError::invalid(format!("{}: {e}", path.display()))
    }
}

/// Writes a header and rows of pre-formatted fields.
pub(crate) fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads headerless CSV records. A first row whose first field equals
/// `header` is skipped; `#` starts a comment line.
pub(crate) fn read_csv(path: &Path, header: &str) -> CliResult<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        rows.push(rec.iter().map(str::to_owned).collect::<Vec<_>>());
    }
    if rows.first().is_some_and(|r| r[0] == header) {
        rows.remove(0);
    }
    Ok(rows)
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v}")
}
