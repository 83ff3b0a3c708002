//! Artifact writers. Floats are printed in Rust's shortest round-trip form,
//! so identical runs give byte-identical files.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::{CliError, SCHEMA_VERSION};

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Pretty JSON with `schema_version` as the first key.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Versioned<'a, T> {
        schema_version: u32,
        #[serde(flatten)]
        body: &'a T,
    }
    let text = serde_json::to_string_pretty(&Versioned {
        schema_version: SCHEMA_VERSION,
        body: value,
    })
    .map_err(|e| CliError::io(path, e.into()))?;
    write_text(path, &(text + "\n"))
}

/// Row-oriented CSV with a header line.
pub struct CsvTable {
    buf: String,
    columns: usize,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let names: Vec<&str> = header.iter().map(AsRef::as_ref).collect();
        Self {
            buf: names.join(",") + "\n",
            columns: names.len(),
        }
    }

    /// Leading integer keys followed by float values.
    pub fn row(&mut self, keys: &[u64], values: &[f64]) {
        debug_assert_eq!(keys.len() + values.len(), self.columns);
        let mut first = true;
        for k in keys {
            if !first {
                self.buf.push(',');
            }
            first = false;
            write!(self.buf, "{k}").unwrap();
        }
        for v in values {
            if !first {
                self.buf.push(',');
            }
            first = false;
            write!(self.buf, "{v}").unwrap();
        }
        self.buf.push('\n');
    }

    /// A row whose leading fields are free text.
    pub fn labeled_row(&mut self, labels: &[&str], values: &[f64]) {
        let mut fields: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        fields.extend(values.iter().map(|v| v.to_string()));
        debug_assert_eq!(fields.len(), self.columns);
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_text(path, &self.buf)
    }
}

/// Column names `prefix0, prefix1, ...`.
pub fn indexed(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn write_bytes(path: &Path, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| CliError::io(path, e))?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(|e| CliError::io(path, e))
}
