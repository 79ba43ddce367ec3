//! Exit codes and the per-directory lock file.

use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};

use vqd::clustering::ClusterError;
use vqd::io::IngestError;
use vqd::metrics::MetricsError;
use vqd::report::ReportError;
use vqd::synth::SynthError;

pub const SUCCESS: u8 = 0;
pub const RUNTIME: u8 = 1;
pub const USAGE: u8 = 2;

/// A flag-level problem found before any file is touched.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(pub String);

/// Input files that failed strict validation.
#[derive(Debug, thiserror::Error)]
#[error("{0} input file(s) failed validation")]
pub struct ValidationFailed(pub usize);

fn ingest_code(e: &IngestError) -> u8 {
    match e {
        IngestError::Io { .. } => RUNTIME,
        _ => USAGE,
    }
}

/// Maps an error to the exit-code contract: 2 for bad flags or bad input,
/// 1 for everything that went wrong at run time.
pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() || cause.is::<ValidationFailed>() || cause.is::<MetricsError>() {
            return USAGE;
        }
        if let Some(e) = cause.downcast_ref::<IngestError>() {
            return ingest_code(e);
        }
        if let Some(e) = cause.downcast_ref::<ClusterError>() {
            return match e {
                ClusterError::Io { source, .. } if source.kind() != io::ErrorKind::NotFound => {
                    RUNTIME
                }
                _ => USAGE,
            };
        }
        if let Some(e) = cause.downcast_ref::<ReportError>() {
            return match e {
                ReportError::Io { .. } => RUNTIME,
                ReportError::Ingest(e) => ingest_code(e),
                _ => USAGE,
            };
        }
        if let Some(e) = cause.downcast_ref::<SynthError>() {
            return match e {
                SynthError::Io { .. } => RUNTIME,
                SynthError::Ingest(e) => ingest_code(e),
                _ => USAGE,
            };
        }
    }
    RUNTIME
}

pub const LOCK_FILE: &str = ".vqd.lock";

/// Held while a command writes into a directory; removed on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).map_err(|e| {
            anyhow::anyhow!("{}: cannot create output directory: {e}", dir.display())
        })?;
        let path = dir.join(LOCK_FILE);
        match File::options().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(anyhow::anyhow!(
                "{}: another vqd process is writing here (remove the lock file if it is stale)",
                path.display()
            )),
            Err(e) => Err(anyhow::anyhow!("{}: {e}", path.display())),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Directory holding `file`, `.` for bare file names.
pub fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies_errors() {
        let e = anyhow::Error::new(ClusterError::TooFewPoints { points: 2, k: 3 });
        assert_eq!(code(&e), USAGE);
        let e = anyhow::Error::new(IngestError::FileNotFound("x".into()));
        assert_eq!(code(&e), USAGE);
        let e = anyhow::Error::new(ReportError::Io {
            path: "x".into(),
            source: io::Error::other("disk full"),
        });
        assert_eq!(code(&e), RUNTIME);
        let e = anyhow::Error::new(Usage("bad".into())).context("while parsing");
        assert_eq!(code(&e), USAGE);
        assert_eq!(code(&anyhow::anyhow!("plain")), RUNTIME);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(OutputLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn parent_of_bare_name_is_cwd() {
        assert_eq!(parent_dir(Path::new("m.json")), PathBuf::from("."));
        assert_eq!(parent_dir(Path::new("a/m.json")), PathBuf::from("a"));
    }
}
