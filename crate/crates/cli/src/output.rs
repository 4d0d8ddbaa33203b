//! Run directories, the run journal and JSON/CSV writers.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::Failure;

/// Environment variable naming the default parent of run directories.
pub const OUTPUT_ROOT_ENV: &str = "V2G_OUTPUT_ROOT";

/// Identifies the inputs an artifact was produced from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
}

/// An artifact together with the run it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tagged<T> {
    pub meta: RunMeta,
    #[serde(flatten)]
    pub body: T,
}

pub struct RunDir {
    pub path: PathBuf,
    journal: File,
}

impl RunDir {
    /// Uses `explicit` as is, or creates `<root>/<command>-<timestamp>-<shortseed>`.
    pub fn create(explicit: Option<&Path>, command: &str, seed: u64) -> Result<Self, Failure> {
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let root = std::env::var_os(OUTPUT_ROOT_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("runs"));
                let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
                let base = format!("{command}-{stamp}-{:08x}", seed & 0xffff_ffff);
                let mut candidate = root.join(&base);
                let mut k = 1;
                while candidate.exists() {
                    candidate = root.join(format!("{base}.{k}"));
                    k += 1;
                }
                candidate
            }
        };
        fs::create_dir_all(&path)
            .map_err(|e| Failure::config(format!("cannot create output directory {}: {e}", path.display())))?;
        let journal = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path.join("journal.log"))
            .map_err(|e| Failure::config(format!("output directory {} is not writable: {e}", path.display())))?;
        Ok(Self { path, journal })
    }

    /// Appends a timestamped line to `journal.log` and logs it.
    pub fn note(&mut self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        log::info!("{msg}");
        let stamp = chrono::Utc::now().format("%Y-%m-%dT%H:%M:%S%.3fZ");
        let _ = writeln!(self.journal, "{stamp} {msg}");
    }

    pub fn file(&self, name: &str) -> Result<File, Failure> {
        let p = self.path.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| io_failure(&p, e))?;
        }
        File::create(&p).map_err(|e| io_failure(&p, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), Failure> {
        let mut f = self.file(name)?;
        f.write_all(text.as_bytes())
            .map_err(|e| io_failure(&self.path.join(name), e))
    }

    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), Failure> {
        let mut w = csv::Writer::from_writer(self.file(name)?);
        for r in rows {
            w.serialize(r).map_err(|e| Failure::config(format!("{name}: {e}")))?;
        }
        w.flush().map_err(|e| io_failure(&self.path.join(name), e))
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::config(format!("cannot write {}: {e}", path.display()))
}
