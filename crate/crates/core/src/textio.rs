//! Shared plumbing for the plain-text artifact formats: 17-significant-digit
//! float serialization, line-delimited record files, content checksums, and
//! write-once run directories guarded by a lock file.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Serializes a float with 17 significant digits, which round-trips every
/// finite f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// FNV-1a over a file's bytes, as a fixed-width hex string. Used to pin
/// evaluation reports to the exact test file they were computed from.
pub fn file_checksum(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    Ok(format!("{hash:016x}"))
}

#[derive(Debug, Error)]
pub enum RunDirError {
    #[error("output directory {0} already contains run artifacts (outputs are write-once)")]
    NotEmpty(PathBuf),
    #[error("output directory {0} is locked by another command")]
    Locked(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A freshly created (or empty) output directory holding a `.lock` file for
/// the lifetime of this guard. Commands never share a run directory.
pub struct RunDir {
    path: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path) -> Result<Self, RunDirError> {
        let io_err = |path: &Path, source| RunDirError::Io {
            path: path.to_path_buf(),
            source,
        };
        fs::create_dir_all(path).map_err(|e| io_err(path, e))?;
        let mut entries = fs::read_dir(path).map_err(|e| io_err(path, e))?;
        if let Some(entry) = entries.next() {
            let name = entry.map_err(|e| io_err(path, e))?.file_name();
            if name == ".lock" {
                return Err(RunDirError::Locked(path.to_path_buf()));
            }
            return Err(RunDirError::NotEmpty(path.to_path_buf()));
        }
        let lock = path.join(".lock");
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
        {
            Ok(_) => Ok(Self {
                path: path.to_path_buf(),
                lock,
            }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(RunDirError::Locked(path.to_path_buf()))
            }
            Err(e) => Err(io_err(&lock, e)),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Buffered line writer for record streams.
pub struct LineWriter {
    inner: BufWriter<fs::File>,
    path: PathBuf,
}

impl LineWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(Self {
            inner: BufWriter::new(fs::File::create(path)?),
            path: path.to_path_buf(),
        })
    }

    pub fn write_line(&mut self, line: &str) -> std::io::Result<()> {
        self.inner.write_all(line.as_bytes())?;
        self.inner.write_all(b"\n")
    }

    pub fn finish(mut self) -> std::io::Result<()> {
        self.inner.flush()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
