//! Run manifests: what was read, what was written and how long it took.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<PathBuf>,
    /// Seconds per phase.
    pub timings: BTreeMap<String, f64>,
    /// Non-fatal failures (failed starts, failed baselines, ...).
    pub failures: BTreeMap<String, usize>,
    pub summary: serde_json::Value,
    /// The only field that differs between otherwise identical runs.
    pub created_unix: u64,
    #[serde(skip)]
    clock: Option<(String, Instant)>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: impl Serialize) -> Result<Self> {
        Ok(Self {
            tool: "mlcwm",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            failures: BTreeMap::new(),
            summary: serde_json::Value::Null,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            clock: None,
        })
    }

    /// Reads a file once, records its digest and returns the bytes.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputRecord {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len(),
        });
        Ok(bytes)
    }

    /// Starts timing `phase`, closing the previous one.
    pub fn phase(&mut self, phase: &str) {
        self.stop();
        self.clock = Some((phase.to_string(), Instant::now()));
    }

    fn stop(&mut self) {
        if let Some((name, t)) = self.clock.take() {
            *self.timings.entry(name).or_default() += t.elapsed().as_secs_f64();
        }
    }

    pub fn failure(&mut self, kind: &str, n: usize) {
        if n > 0 {
            *self.failures.entry(kind.to_string()).or_default() += n;
        }
    }

    pub fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn write_json(&mut self, path: &Path, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(path, text)
    }

    pub fn write_csv<T: Serialize>(&mut self, path: &Path, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.write(path, bytes)
    }

    /// Writes `manifest.json` into `dir` and lists it among the outputs.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.stop();
        let path = dir.join("manifest.json");
        self.outputs.push(path.clone());
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::create_dir_all(dir)?;
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn phases_accumulate() {
        let mut m = RunManifest::new("t", None, ()).unwrap();
        m.phase("a");
        m.phase("b");
        m.phase("a");
        m.stop();
        assert_eq!(m.timings.len(), 2);
        m.failure("starts", 0);
        assert!(m.failures.is_empty());
        m.failure("starts", 2);
        assert_eq!(m.failures["starts"], 2);
    }
}
