//! Output directories: atomic file writes plus one run manifest per directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// Input path to dataset fingerprint (or, for model files, the
    /// fingerprint of the data the model was trained on).
    pub input_hashes: BTreeMap<String, String>,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            input_hashes: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })
    }

    pub fn input(&mut self, path: &Path, hash: impl Into<String>) {
        self.input_hashes.insert(path.display().to_string(), hash.into());
    }
}

/// A run's output directory.
pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes through a temp file in the same directory, then renames.
    pub fn write_with<F>(&mut self, name: &str, body: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let target = self.path(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root)
            .with_context(|| format!("creating temp file in {}", self.root.display()))?;
        {
            let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
            body(&mut buf)?;
            buf.flush()?;
        }
        tmp.persist(&target)
            .with_context(|| format!("writing {}", target.display()))?;
        log::debug!("wrote {}", target.display());
        self.written.push(target.clone());
        Ok(target)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        self.write_with(name, |w| Ok(w.write_all(text.as_bytes())?))
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Replaces any earlier manifest, so the directory always holds one.
    pub fn finish(mut self, manifest: &RunManifest) -> Result<Vec<PathBuf>> {
        self.write_json(MANIFEST_FILE, manifest)?;
        Ok(self.written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewrite_keeps_single_manifest() {
        let dir = tempfile::tempdir().unwrap();
        for run in 0..2 {
            let mut out = OutDir::create(dir.path()).unwrap();
            out.write_text("a.txt", &format!("run {run}\n")).unwrap();
            let m = RunManifest::new("test", &serde_json::json!({ "run": run })).unwrap();
            out.finish(&m).unwrap();
        }
        let names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names.iter().filter(|n| *n == MANIFEST_FILE).count(), 1);
        assert_eq!(names.len(), 2, "{names:?}");
        assert_eq!(fs::read_to_string(dir.path().join("a.txt")).unwrap(), "run 1\n");
    }
}
