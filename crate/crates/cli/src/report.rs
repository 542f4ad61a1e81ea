use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

/// Machine-readable outcome of one command.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub wall_time_s: f64,
    pub metrics: BTreeMap<String, f64>,
    pub artifacts: BTreeMap<String, PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(command: &str, config_digest: String, seed: u64) -> Self {
        Self {
            command: command.into(),
            config_digest,
            seed,
            wall_time_s: 0.0,
            metrics: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub fn artifact(&mut self, name: &str, path: &Path) {
        self.artifacts.insert(name.into(), path.to_path_buf());
    }

    pub fn warn(&mut self, message: String) {
        eprintln!("warning: {message}");
        self.warnings.push(message);
    }

    /// Writes `<dir>/<command>.report.json`; refuses non-finite metrics.
    pub fn write(&mut self, dir: &Path) -> Result<PathBuf> {
        if let Some((k, v)) = self.metrics.iter().find(|(_, v)| !v.is_finite()) {
            bail!("metric {k} is not finite ({v})");
        }
        let path = dir.join(format!("{}.report.json", self.command.replace(' ', "-")));
        self.artifact("report", &path);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Writes a CSV with a header row.
pub fn write_curve(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Advisory lock next to a file this process is about to own. Removed on drop.
pub struct FileLock {
    path: PathBuf,
    _file: File,
}

impl FileLock {
    pub fn acquire(target: &Path) -> Result<Self> {
        let mut name = target.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".lock");
        let path = target.with_file_name(name);
        let file = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                anyhow::anyhow!("{} is in use by another run (lock file {}; remove it if that run is gone)", target.display(), path.display())
            } else {
                anyhow::anyhow!("creating lock {}: {e}", path.display())
            }
        })?;
        Ok(Self { path, _file: file })
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
