//! Output files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gradsurgeon::ExperimentConfig;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

/// Collects the files written into one output directory.
pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Records a file written by someone else.
    pub fn track(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.track(name);
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl serde::Serialize) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn write_jsonl<T: serde::Serialize>(&mut self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let mut text = String::new();
        for row in rows {
            text.push_str(&serde_json::to_string(row)?);
            text.push('\n');
        }
        self.write(name, &text)
    }

    /// Writes `manifest.json` with the sha256 of every tracked file.
    pub fn finish(mut self, command: &str, cfg: &ExperimentConfig, extra: Value) -> Result<()> {
        self.files.sort();
        let mut files = serde_json::Map::new();
        for name in &self.files {
            let bytes = fs::read(self.path(name)).with_context(|| format!("hashing {name}"))?;
            files.insert(name.clone(), json!(sha256_hex(&bytes)));
        }
        let manifest = json!({
            "tool": "gradsurgeon",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": cfg.seed(),
            "config_hash": cfg.hash(),
            "config": cfg.as_map(),
            "files": files,
            "extra": extra,
        });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.path(MANIFEST), text)?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
