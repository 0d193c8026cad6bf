//! Run manifest written next to every command's outputs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "run_manifest.csv";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct RunManifest {
    command: String,
    seed: Option<u64>,
    model_hash: Option<String>,
    inputs: Vec<(String, String)>,
    started: SystemTime,
    clock: Instant,
}

impl RunManifest {
    pub fn new(argv: &[String]) -> Self {
        Self {
            command: argv.join(" "),
            seed: None,
            model_hash: None,
            inputs: Vec::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn model(&mut self, text: &str) {
        self.model_hash = Some(sha256_hex(text.as_bytes()));
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push((path.display().to_string(), sha256_hex(bytes)));
    }

    /// Writes `key,value` rows into `dir`.
    pub fn write(&self, dir: &Path, status: &str) -> std::io::Result<PathBuf> {
        let path = dir.join(FILE_NAME);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut row = |k: &str, v: &str| w.write_record([k, v]);
        row("key", "value")?;
        row("command", &self.command)?;
        row("toolkit_version", env!("CARGO_PKG_VERSION"))?;
        row("seed", &self.seed.map(|s| s.to_string()).unwrap_or_default())?;
        row("model_sha256", self.model_hash.as_deref().unwrap_or(""))?;
        for (p, h) in &self.inputs {
            row(&format!("input_sha256:{p}"), h)?;
        }
        row("status", status)?;
        let started = self
            .started
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        row("started_unix", &started.to_string())?;
        row(
            "duration_s",
            &format!("{:.6}", self.clock.elapsed().as_secs_f64()),
        )?;
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        std::fs::File::create(&path)?.write_all(&bytes)?;
        Ok(path)
    }
}
