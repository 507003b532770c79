//! Output directories: a manifest written before any artifact and rewritten
//! when the run completes, plus checkpoint and training-log files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::agent::Checkpoint;
use super::config::{save_config, RunConfig};
use super::train::UpdateStats;
use crate::error::{DpiError, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    /// Set for single-seed runs.
    pub seed: Option<u64>,
    pub seeds: Vec<u64>,
    pub revision: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// False until every artifact has been written.
    pub complete: bool,
    pub artifacts: Vec<String>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// `DPI_REVISION` if set, else `git describe`, else the crate version.
pub fn revision() -> String {
    if let Ok(r) = std::env::var("DPI_REVISION") {
        return r;
    }
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

/// A directory of artifacts for one command.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    manifest: RunManifest,
}

impl OutputDir {
    /// Creates `root`, saves the config and an incomplete manifest.
    pub fn create(root: &Path, cfg: &RunConfig, command: &str, seed: Option<u64>) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| DpiError::io(root, e))?;
        let mut out = OutputDir {
            root: root.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                config_hash: cfg.hash(),
                seed,
                seeds: seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]),
                revision: revision(),
                started_unix: unix_now(),
                finished_unix: None,
                complete: false,
                artifacts: Vec::new(),
            },
        };
        save_config(cfg, &root.join("config.toml"))?;
        out.record("config.toml");
        out.save_manifest()?;
        Ok(out)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn record(&mut self, name: &str) {
        if !self.manifest.artifacts.iter().any(|a| a == name) {
            self.manifest.artifacts.push(name.to_string());
        }
    }

    fn save_manifest(&self) -> Result<()> {
        let path = self.root.join(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| DpiError::Serde(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| DpiError::io(&path, e))
    }

    /// Writes `name` through `f` and lists it in the manifest.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.root.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| DpiError::io(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| DpiError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| DpiError::io(&path, e))?;
        self.record(name);
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        self.write_with(name, |w| {
            w.write_all(text.as_bytes())
                .map_err(|e| DpiError::io(Path::new(name), e))
        })
    }

    /// Marks the run complete.
    pub fn finish(mut self) -> Result<RunManifest> {
        self.manifest.complete = true;
        self.manifest.finished_unix = Some(unix_now());
        self.save_manifest()?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| DpiError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| DpiError::Serde(e.to_string()))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let text = serde_json::to_string(ckpt).map_err(|e| DpiError::Serde(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| DpiError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| DpiError::io(path, e))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| DpiError::Serde(e.to_string()))?;
    ckpt.config.validate()?;
    Ok(ckpt)
}

/// One JSON object per optimizer update.
pub fn write_train_log<W: Write>(mut out: W, stats: &[UpdateStats]) -> Result<()> {
    for s in stats {
        let line = serde_json::to_string(s).map_err(|e| DpiError::Serde(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| DpiError::io(Path::new("train_log.jsonl"), e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_marks_completion() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let mut out = OutputDir::create(dir.path(), &cfg, "train", Some(4)).unwrap();
        out.write_text("a.csv", "x\n").unwrap();
        let before = read_manifest(dir.path()).unwrap();
        assert!(!before.complete);
        assert_eq!(before.config_hash, cfg.hash());
        let m = out.finish().unwrap();
        assert!(m.complete);
        assert_eq!(m.seeds, vec![4]);
        assert_eq!(m.artifacts, vec!["config.toml", "a.csv"]);
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
    }

    #[test]
    fn train_log_is_one_line_per_update() {
        let stats = vec![
            UpdateStats::default(),
            UpdateStats {
                update: 2,
                ..UpdateStats::default()
            },
        ];
        let mut buf = Vec::new();
        write_train_log(&mut buf, &stats).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back: UpdateStats = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(back.update, 2);
    }
}
