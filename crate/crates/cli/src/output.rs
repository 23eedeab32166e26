//! Output directories, file manifests and summary statistics.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the manifest's directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Every file a command wrote, with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub echo: serde_json::Value,
    pub files: Vec<FileEntry>,
    /// Digest over the echo and every file entry; no timestamps, so reruns match.
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Collects the files a command writes under one root.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl OutputDir {
    /// Empties `root` first: a command owns its directory, so nothing stale
    /// can sit next to the files its manifest lists.
    pub fn create(root: PathBuf) -> Result<Self> {
        if root.exists() {
            std::fs::remove_dir_all(&root).map_err(io_err(&root))?;
        }
        std::fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self {
            root,
            files: Vec::new(),
        })
    }

    /// Absolute path for `rel`, creating parents and recording it for the manifest.
    pub fn declare(&mut self, rel: impl AsRef<Path>) -> Result<PathBuf> {
        let path = self.root.join(rel.as_ref());
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        self.files.push(rel.as_ref().to_path_buf());
        Ok(path)
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, contents: &[u8]) -> Result<PathBuf> {
        let path = self.declare(rel)?;
        std::fs::write(&path, contents).map_err(io_err(&path))?;
        Ok(path)
    }

    /// Newline-terminated lines, as used for JSON-lines streams.
    pub fn write_lines(&mut self, rel: impl AsRef<Path>, lines: &[String]) -> Result<PathBuf> {
        let mut buf = String::new();
        for l in lines {
            buf.push_str(l);
            buf.push('\n');
        }
        self.write(rel, buf.as_bytes())
    }

    pub fn write_json<T: Serialize>(
        &mut self,
        rel: impl AsRef<Path>,
        value: &T,
    ) -> Result<PathBuf> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.write(rel, &buf)
    }

    /// Hashes every declared file and writes `manifest.json` at the root.
    pub fn finish(self, command: &str, echo: serde_json::Value) -> Result<Manifest> {
        let mut files = Vec::with_capacity(self.files.len());
        for rel in &self.files {
            let path = self.root.join(rel);
            let data = std::fs::read(&path).map_err(|_| CliError::MissingArtifact(path.clone()))?;
            files.push(FileEntry {
                path: rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/"),
                sha256: sha256_hex(&data),
                bytes: data.len() as u64,
            });
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let mut digest = Sha256::new();
        digest.update(serde_json::to_vec(&echo)?);
        for f in &files {
            digest.update(format!("{}\0{}\n", f.path, f.sha256));
        }
        let hash = digest
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        let manifest = Manifest {
            command: command.to_string(),
            echo,
            files,
            hash,
        };
        let path = self.root.join(MANIFEST);
        let mut w = std::fs::File::create(&path).map_err(io_err(&path))?;
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w).map_err(io_err(&path))?;
        Ok(manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let data = std::fs::read(&path).map_err(|_| CliError::MissingArtifact(path.clone()))?;
    Ok(serde_json::from_slice(&data)?)
}

/// Checks that every file listed in `manifest` under `dir` still has its recorded hash.
pub fn verify_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    for f in &manifest.files {
        let path = dir.join(&f.path);
        let data = std::fs::read(&path).map_err(|_| CliError::MissingArtifact(path.clone()))?;
        if sha256_hex(&data) != f.sha256 {
            return Err(CliError::Mismatch(format!(
                "{} changed since it was written",
                path.display()
            )));
        }
    }
    Ok(())
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
