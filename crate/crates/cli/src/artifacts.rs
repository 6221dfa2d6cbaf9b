//! Config digests and artifact writers. Every file carries the digest and the seed.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Version of the configuration schema folded into every digest.
pub const SCHEMA_VERSION: u32 = 1;

/// SHA-256 of the canonical JSON (sorted keys, no whitespace) of `config`.
pub fn config_digest(command: &str, config: &Value) -> String {
    let canonical = serde_json::json!({ "schema": SCHEMA_VERSION, "command": command, "config": config });
    // serde_json maps are ordered by key, so serialisation is canonical.
    let bytes = serde_json::to_vec(&canonical).expect("JSON values serialise");
    hex::encode(Sha256::digest(bytes))
}

/// Output directory stamped with one configuration.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub digest: String,
    pub seed: u64,
}

impl Artifacts {
    pub fn new(dir: &Path, digest: String, seed: u64) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Artifacts { dir: dir.to_path_buf(), digest, seed })
    }

    fn write(&self, name: &str, body: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// RFC 4180 body preceded by one `#` line with the digest and seed.
    pub fn csv<S: AsRef<str>>(&self, name: &str, header: &[&str], rows: &[Vec<S>]) -> Result<PathBuf> {
        self.write(name, &csv_text(&self.digest, self.seed, header, rows)?)
    }

    /// JSON object with `config_digest` and `seed` fields added at the top level.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let v = stamp_json(value, &self.digest, self.seed)?;
        let mut body = serde_json::to_vec_pretty(&v)?;
        body.push(b'\n');
        self.write(name, &body)
    }

    pub fn svg(&self, name: &str, svg: &str) -> Result<PathBuf> {
        self.write(name, svg.as_bytes())
    }

    pub fn text(&self, name: &str, text: &str) -> Result<PathBuf> {
        self.write(name, text.as_bytes())
    }

    /// Text preceded by the same `#` line as [`Artifacts::csv`].
    pub fn stamped(&self, name: &str, text: &str) -> Result<PathBuf> {
        self.write(name, format!("# config_digest={} seed={}\n{text}", self.digest, self.seed).as_bytes())
    }
}

pub fn csv_text<S: AsRef<str>>(digest: &str, seed: u64, header: &[&str], rows: &[Vec<S>]) -> Result<Vec<u8>> {
    let mut out = format!("# config_digest={digest} seed={seed}\n").into_bytes();
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|s| s.as_ref()))?;
    }
    out.extend(w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?);
    Ok(out)
}

pub fn stamp_json<T: Serialize>(value: &T, digest: &str, seed: u64) -> Result<Value> {
    let mut v = serde_json::to_value(value)?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.insert("config_digest".into(), Value::String(digest.into()));
            obj.insert("seed".into(), Value::from(seed));
        }
        None => {
            v = serde_json::json!({ "value": v, "config_digest": digest, "seed": seed });
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"n": 4, "alpha": [0.5, 0.6]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"alpha": [0.5, 0.6], "n": 4}"#).unwrap();
        assert_eq!(config_digest("phase", &a), config_digest("phase", &b));
        assert_ne!(config_digest("phase", &a), config_digest("walk", &a));
        assert_eq!(config_digest("x", &a).len(), 64);
    }

    #[test]
    fn csv_is_stamped_and_quoted() {
        let body = csv_text("abc", 7, &["a", "b"], &[vec!["1", "x,y"]]).unwrap();
        assert_eq!(String::from_utf8(body).unwrap(), "# config_digest=abc seed=7\na,b\r\n1,\"x,y\"\r\n");
        let v = stamp_json(&serde_json::json!({"k": 1}), "abc", 7).unwrap();
        assert_eq!(v["config_digest"], "abc");
        assert_eq!(v["seed"], 7);
    }
}
