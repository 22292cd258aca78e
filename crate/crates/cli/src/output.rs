//! Output directory bookkeeping and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::Loaded;
use crate::error::CliError;

pub struct Run {
    root: PathBuf,
    outputs: Vec<PathBuf>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Run {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&root)?;
        Ok(Self { root, outputs: Vec::new() })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Lists `path` in the manifest.
    pub fn record(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn write_json(&mut self, rel: &str, value: &serde_json::Value) -> Result<(), CliError> {
        let path = self.path(rel);
        std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
        self.record(path);
        Ok(())
    }

    /// Writes the config copy and `manifest.json` with hashes of every input
    /// and recorded output. Contains no timestamps, so reruns match byte for
    /// byte.
    pub fn finish(mut self, command: &str, cfg: &Loaded) -> Result<(), CliError> {
        let config_path = self.path("config.toml");
        std::fs::write(&config_path, &cfg.text)?;
        self.record(config_path);
        let mut inputs = BTreeMap::new();
        for p in cfg.input_paths() {
            inputs.insert(p.display().to_string(), sha256_file(&p)?);
        }
        if let Some(m) = &cfg.config.model {
            let index = cfg.resolve(&m.dir).join(crate::model::MODEL_INDEX);
            inputs.insert(index.display().to_string(), sha256_file(&index)?);
        }
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            let rel = p.strip_prefix(&self.root).unwrap_or(p);
            outputs.insert(rel.to_string_lossy().replace('\\', "/"), sha256_file(p)?);
        }
        let seeds = cfg.config.seeds.clone().unwrap_or_else(|| vec![cfg.config.seed]);
        let manifest = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seeds": seeds,
            "config": cfg.text,
            "inputs": inputs,
            "outputs": outputs,
        });
        std::fs::write(self.path("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}
