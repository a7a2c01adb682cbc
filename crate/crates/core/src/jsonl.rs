//! Line-delimited JSON reading and writing shared by every file format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{HoiError, Result};
use crate::provenance::Provenance;

/// Key of the optional header line written ahead of the records.
pub const PROVENANCE_KEY: &str = "_provenance";

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| HoiError::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| HoiError::io(parent, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| HoiError::io(path, e))
}

/// Calls `f` with the 1-based line number and typed record of every data line.
/// Blank lines and provenance headers are skipped.
pub fn for_each_record<R, T, F>(reader: R, source: &str, mut f: F) -> Result<()>
where
    R: BufRead,
    T: DeserializeOwned,
    F: FnMut(usize, T) -> Result<()>,
{
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| HoiError::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| HoiError::Parse {
            source_name: source.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        if value.get(PROVENANCE_KEY).is_some() {
            continue;
        }
        let record: T = serde_json::from_value(value).map_err(|e| HoiError::Parse {
            source_name: source.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
        f(line_no, record)?;
    }
    Ok(())
}

pub fn write_records<W, T, I>(mut writer: W, provenance: Option<&Provenance>, records: I) -> Result<()>
where
    W: Write,
    T: Serialize,
    I: IntoIterator<Item = T>,
{
    let io_err = |e: std::io::Error| HoiError::io("<output>", e);
    if let Some(p) = provenance {
        let header = serde_json::json!({ PROVENANCE_KEY: p });
        serde_json::to_writer(&mut writer, &header).map_err(|e| io_err(e.into()))?;
        writer.write_all(b"\n").map_err(io_err)?;
    }
    for record in records {
        serde_json::to_writer(&mut writer, &record).map_err(|e| io_err(e.into()))?;
        writer.write_all(b"\n").map_err(io_err)?;
    }
    writer.flush().map_err(io_err)
}
