use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rsm_core::{Result, RsmError};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

/// What produced an output directory: the command, its flags and config,
/// and the files it wrote.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub args: Vec<String>,
    pub config: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub status: String,
    pub outputs: Vec<PathBuf>,
    #[serde(skip)]
    dir: PathBuf,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl RunManifest {
    /// Creates `dir` and writes the initial manifest.
    pub fn start(command: &str, dir: &Path, config: Vec<(String, String)>, seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| RsmError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let m = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            args: std::env::args().skip(1).collect(),
            config,
            seed,
            started_unix: now(),
            finished_unix: None,
            status: "running".to_string(),
            outputs: Vec::new(),
            dir: dir.to_path_buf(),
        };
        m.write()?;
        Ok(m)
    }

    /// Records an output; paths are stored relative to the manifest.
    pub fn output(&mut self, path: &Path) {
        let rel = path.strip_prefix(&self.dir).unwrap_or(path).to_path_buf();
        if !self.outputs.contains(&rel) {
            self.outputs.push(rel);
        }
    }

    pub fn finish(mut self, status: &str) -> Result<()> {
        self.finished_unix = Some(now());
        self.status = status.to_string();
        self.write()
    }

    fn write(&self) -> Result<()> {
        let path = self.dir.join(MANIFEST_FILE);
        let tmp = self.dir.join(format!("{MANIFEST_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).map_err(|e| RsmError::Data(e.to_string()))? + "\n";
        fs::write(&tmp, text)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| RsmError::Io { path, source: e })
    }
}
