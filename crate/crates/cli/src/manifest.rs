use std::path::{Path, PathBuf};

use anyhow::Context;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot hash {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json(path: &Path, value: &Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Writes the run manifest: resolved config, seed and the SHA-256 of every
/// artifact. Artifact paths are recorded relative to the manifest.
pub fn write(manifest: &Path, config: &Value, artifacts: &[PathBuf]) -> anyhow::Result<()> {
    let base = manifest.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for a in artifacts {
        let shown = a.strip_prefix(base).unwrap_or(a);
        entries.push(json!({"path": shown.display().to_string(), "sha256": sha256_file(a)?}));
    }
    let value = json!({
        "tool": "glmprog",
        "version": env!("CARGO_PKG_VERSION"),
        "seed": config["seed"],
        "config": config,
        "artifacts": entries,
    });
    write_json(manifest, &value)
}

/// `<file>.manifest.json` next to a single-file output.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}
