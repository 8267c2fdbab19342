//! Input digests and run parameters embedded into every output file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool_version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    /// Input path → SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub params: Value,
}

impl Provenance {
    pub fn new(command: &'static str, seed: u64, params: Value) -> Self {
        Self { tool_version: ctxsched::TOOL_VERSION, command, seed, inputs: BTreeMap::new(), params }
    }

    /// Reads `path`, recording its digest.
    pub fn read(&mut self, path: &Path) -> Result<String, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.insert(path.display().to_string(), ctxsched::digest::sha256_hex(&text));
        Ok(text)
    }

    /// `# key=value` lines for CSV outputs.
    pub fn csv_comment(&self) -> String {
        let mut out = format!("# tool_version={}\n# command={}\n# seed={}\n", self.tool_version, self.command, self.seed);
        for (path, digest) in &self.inputs {
            out.push_str(&format!("# input {path} sha256={digest}\n"));
        }
        out.push_str(&format!("# params={}\n", self.params));
        out
    }
}

/// Serializes `body` with a top-level `provenance` member added.
pub fn with_provenance(body: impl Serialize, provenance: &Provenance) -> Result<Value, CliError> {
    let mut value = serde_json::to_value(body).map_err(|e| CliError::Internal(e.to_string()))?;
    let prov = serde_json::to_value(provenance).map_err(|e| CliError::Internal(e.to_string()))?;
    match &mut value {
        Value::Object(map) => {
            map.insert("provenance".into(), prov);
        }
        _ => return Err(CliError::Internal("report body is not a JSON object".into())),
    }
    Ok(value)
}

pub fn resolve(out_dir: &Path, output: Option<&Path>, default_name: &str) -> PathBuf {
    match output {
        Some(p) if p.is_absolute() => p.to_path_buf(),
        Some(p) => out_dir.join(p),
        None => out_dir.join(default_name),
    }
}

pub fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write(path, &text)
}
