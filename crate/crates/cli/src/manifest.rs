use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Provenance for one command run. Every artifact in the output directory
/// carries the same `run_id`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub run_id: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, InputDigest>,
    pub artifacts: Vec<String>,
    pub threads: usize,
    /// Wall-clock milliseconds per stage. Not reproducible by design.
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            run_id: String::new(),
            config,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
            threads: netexposure::par::current_threads(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.insert(
            role.into(),
            InputDigest {
                path: path.display().to_string(),
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    /// Hash of command, config, seeds and input digests; fix it before
    /// writing artifacts.
    pub fn seal(&mut self) {
        fn strip(v: &mut serde_json::Value) {
            match v {
                serde_json::Value::Object(o) => {
                    o.remove("out_dir");
                    o.remove("threads");
                    o.values_mut().for_each(strip);
                }
                serde_json::Value::Array(a) => a.iter_mut().for_each(strip),
                _ => {}
            }
        }
        // output location and thread cap do not change results
        let mut config = self.config.clone();
        strip(&mut config);
        let key = serde_json::json!({
            "command": self.command,
            "config": config,
            "seeds": self.seeds,
            "inputs": self.inputs.values().map(|d| &d.sha256).collect::<Vec<_>>(),
            "version": self.version,
        });
        self.run_id = hex::encode(Sha256::digest(key.to_string().as_bytes()))[..16].to_string();
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|_| missing(&path))?;
        Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
    }
}

pub fn missing(path: &Path) -> anyhow::Error {
    anyhow::Error::new(crate::Validation(format!("missing artifact, expected {}", path.display())))
}

/// Stage timer feeding `timings_ms`.
pub struct Timer(Instant);

impl Timer {
    pub fn start() -> Self {
        Timer(Instant::now())
    }

    pub fn lap(&mut self, m: &mut RunManifest, stage: &str) {
        m.timings_ms.insert(stage.into(), self.0.elapsed().as_secs_f64() * 1e3);
        self.0 = Instant::now();
    }
}

/// Writes files into the output directory and records their names.
pub struct OutDir {
    pub dir: PathBuf,
    pub written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutDir { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write_with<F>(&mut self, name: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut dyn Write) -> Result<()>,
    {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = std::io::BufWriter::new(
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        f(&mut w)?;
        w.flush()?;
        self.written.push(name.into());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        self.write_with(name, |w| Ok(w.write_all(text.as_bytes())?))
    }

    /// Write `manifest.json` last, listing everything written so far.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<()> {
        manifest.artifacts = std::mem::take(&mut self.written);
        manifest.artifacts.sort();
        self.write_json("manifest.json", &manifest)
    }
}
