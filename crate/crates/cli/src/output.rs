//! Run directory: tracked artifact files plus `manifest.json`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct RunDir {
    root: PathBuf,
    files: Vec<(String, String, usize)>,
}

impl RunDir {
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> io::Result<()> {
        fs::write(self.root.join(name), contents)?;
        self.files.retain(|(n, _, _)| n != name);
        self.files.push((name.to_string(), sha256_hex(contents), contents.len()));
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest; it lists every file written through `self`.
    pub fn finish(mut self, experiment: &str, status: &str, config: Value, summary: Value) -> io::Result<PathBuf> {
        self.files.sort();
        let files: Vec<Value> = self
            .files
            .iter()
            .map(|(n, h, len)| json!({ "path": n, "sha256": h, "bytes": len }))
            .collect();
        let manifest = json!({
            "experiment": experiment,
            "status": status,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "summary": summary,
            "files": files,
        });
        let path = self.root.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Loads a manifest and checks every listed hash.
pub fn verify_manifest(dir: &Path) -> Result<Map<String, Value>, String> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| format!("{}: corrupt manifest: {e}", path.display()))?;
    let Value::Object(map) = value else {
        return Err(format!("{}: manifest is not an object", path.display()));
    };
    let files = map
        .get("files")
        .and_then(Value::as_array)
        .ok_or_else(|| format!("{}: manifest has no file list", path.display()))?;
    for f in files {
        let name = f.get("path").and_then(Value::as_str).ok_or("manifest entry without path")?;
        let hash = f.get("sha256").and_then(Value::as_str).ok_or("manifest entry without sha256")?;
        if name.contains("..") || Path::new(name).is_absolute() {
            return Err(format!("manifest entry `{name}` escapes the run directory"));
        }
        let bytes = fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if sha256_hex(&bytes) != hash {
            return Err(format!("{name}: hash does not match the manifest"));
        }
    }
    Ok(map)
}
