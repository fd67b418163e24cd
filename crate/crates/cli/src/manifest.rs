use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct DatasetRecord {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
    pub entries: usize,
}

/// Everything needed to rerun a command: resolved settings, input checksums,
/// seeds, and where the outputs went.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub seed: u64,
    pub split_seed: Option<u64>,
    pub datasets: Vec<DatasetRecord>,
    pub artifacts: BTreeMap<String, PathBuf>,
}

impl RunManifest {
    pub fn new(command: &'static str, config: impl Serialize, seed: u64) -> Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: serde_json::to_value(config)?,
            seed,
            split_seed: None,
            datasets: Vec::new(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn dataset(&mut self, role: &str, path: &Path, entries: usize) -> Result<()> {
        self.datasets.push(DatasetRecord {
            role: role.to_owned(),
            path: path.to_owned(),
            sha256: sha256_file(path)?,
            entries,
        });
        Ok(())
    }

    pub fn artifact(&mut self, name: &str, path: &Path) {
        self.artifacts.insert(name.to_owned(), path.to_owned());
    }

    pub fn write(&mut self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        self.artifact("manifest", &path);
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}
