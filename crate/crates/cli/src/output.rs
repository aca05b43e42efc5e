use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde_json::{json, Value};

/// Writes result files into one directory. Every CSV starts with a comment
/// line carrying the config hash and seed; every JSON object carries both as
/// fields.
pub struct Artifacts {
    dir: PathBuf,
    sha256: String,
    seed: u64,
    files: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path, sha256: &str, seed: u64) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            sha256: sha256.to_string(),
            seed,
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let file = OpenOptions::new()
            .write(true)
            .create(true)
            .truncate(true)
            .open(&path)
            .with_context(|| format!("opening {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    pub fn csv<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
    {
        let header = format!("# config_sha256={} seed={}", self.sha256, self.seed);
        let mut w = self.open(name)?;
        writeln!(w, "{header}")?;
        body(&mut w).with_context(|| format!("writing {name}"))?;
        w.flush()?;
        Ok(())
    }

    pub fn json(&mut self, name: &str, mut value: Value) -> Result<()> {
        if let Value::Object(map) = &mut value {
            map.insert("config_sha256".into(), json!(self.sha256));
            map.insert("seed".into(), json!(self.seed));
        }
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, &value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// The only file with wall-clock content.
    pub fn finish(mut self, mode: &str, config_path: &Path) -> Result<()> {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let files = self.files.clone();
        self.json(
            "metadata.json",
            json!({
                "mode": mode,
                "config": config_path.display().to_string(),
                "version": env!("CARGO_PKG_VERSION"),
                "unix_time": secs,
                "files": files,
            }),
        )
    }
}
