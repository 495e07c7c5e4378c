//! Resolved run configuration written next to every command's outputs.
//!
//! The file records the command and every effective setting (defaults
//! included) plus the equivalent argv, so `flow4d rerun --config FILE`
//! reproduces the outputs bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use flow4d_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub settings: BTreeMap<String, String>,
    pub argv: Vec<String>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        RunConfig {
            command: command.to_string(),
            settings: BTreeMap::new(),
            argv: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.settings.insert(key.to_string(), value.to_string());
        self
    }

    /// Finalizes argv as the command words plus `--key value` pairs in
    /// deterministic (sorted) order.
    pub fn finish(mut self) -> Self {
        let mut argv: Vec<String> = self.command.split_whitespace().map(String::from).collect();
        for (k, v) in &self.settings {
            argv.push(format!("--{k}"));
            argv.push(v.clone());
        }
        self.argv = argv;
        self
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::FileFormat(format!("config encode: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::FileFormat(format!("config {}: {e}", path.display())))
    }
}

/// Where a command writing to `out` puts its resolved config: alongside a
/// directory, or next to a file with `.config.json` appended.
pub fn config_path_for(out: &Path, is_dir: bool) -> std::path::PathBuf {
    if is_dir {
        out.join("config.json")
    } else {
        let mut name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        name.push_str(".config.json");
        out.with_file_name(name)
    }
}
