//! JSON-lines reading and atomic file output.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: line {line}: {detail}", path.display())]
    Record {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

impl JsonlError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        JsonlError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

/// Reads one `T` per non-blank line. Line numbers in errors are 1-based.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let file = File::open(path).map_err(|e| JsonlError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| JsonlError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| JsonlError::Record {
            path: path.to_owned(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// A file written under a temporary name and renamed into place on
/// [`AtomicFile::commit`]. Dropping without committing removes the temp file.
pub struct AtomicFile {
    target: PathBuf,
    temp: PathBuf,
    writer: Option<BufWriter<File>>,
}

impl AtomicFile {
    pub fn create(target: &Path) -> Result<Self, JsonlError> {
        let name = target
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".to_owned());
        let temp = target.with_file_name(format!(".{name}.partial"));
        let file = File::create(&temp).map_err(|e| JsonlError::io(&temp, e))?;
        Ok(Self {
            target: target.to_owned(),
            temp,
            writer: Some(BufWriter::new(file)),
        })
    }

    fn writer(&mut self) -> &mut BufWriter<File> {
        self.writer.as_mut().expect("writer present until commit")
    }

    pub fn write_all(&mut self, bytes: &[u8]) -> Result<(), JsonlError> {
        let temp = self.temp.clone();
        self.writer()
            .write_all(bytes)
            .map_err(|e| JsonlError::io(&temp, e))
    }

    /// Writes `value` as one JSON line and flushes it.
    pub fn write_line<T: Serialize>(&mut self, value: &T) -> Result<(), JsonlError> {
        let mut line = serde_json::to_vec(value).expect("record serializes");
        line.push(b'\n');
        self.write_all(&line)?;
        let temp = self.temp.clone();
        self.writer().flush().map_err(|e| JsonlError::io(&temp, e))
    }

    pub fn commit(mut self) -> Result<(), JsonlError> {
        let writer = self.writer.take().expect("commit once");
        let file = writer
            .into_inner()
            .map_err(|e| JsonlError::io(&self.temp, e.into_error()))?;
        file.sync_all().map_err(|e| JsonlError::io(&self.temp, e))?;
        fs::rename(&self.temp, &self.target).map_err(|e| JsonlError::io(&self.target, e))
    }
}

impl Drop for AtomicFile {
    fn drop(&mut self) {
        if self.writer.is_some() {
            let _ = fs::remove_file(&self.temp);
        }
    }
}

pub fn write_atomic(target: &Path, bytes: &[u8]) -> Result<(), JsonlError> {
    let mut f = AtomicFile::create(target)?;
    f.write_all(bytes)?;
    f.commit()
}
