use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// What a stage read and wrote. Contains no timestamps or absolute paths, so
/// identical runs produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub rows: BTreeMap<String, usize>,
    pub seed: Option<u64>,
    pub params: serde_json::Value,
}

fn hash_file(path: &Path) -> Result<(String, u64)> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            files_under(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// SHA-256 of a file, or for a directory of the sorted `relative-path hash`
/// lines of every file below it.
pub fn digest_path(path: &Path) -> Result<(String, u64)> {
    if !path.is_dir() {
        return hash_file(path);
    }
    let mut files = Vec::new();
    files_under(path, &mut files)?;
    let mut lines: Vec<(String, String, u64)> = files
        .iter()
        .map(|f| {
            let rel = f.strip_prefix(path).unwrap_or(f);
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            hash_file(f).map(|(h, n)| (rel, h, n))
        })
        .collect::<Result<_>>()?;
    lines.sort();
    let mut hasher = Sha256::new();
    let mut total = 0;
    for (rel, h, n) in &lines {
        hasher.update(format!("{rel} {h}\n").as_bytes());
        total += n;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

/// Builds manifests with paths shown relative to the output directory when
/// inside it and relative to the input root otherwise.
#[derive(Debug, Clone)]
pub struct ManifestBuilder {
    out_root: PathBuf,
    in_root: PathBuf,
    manifest: Manifest,
}

fn relative(path: &Path, root: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    Some(
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/"),
    )
}

impl ManifestBuilder {
    pub fn new(stage: &str, in_root: &Path, out_root: &Path) -> Self {
        Self {
            out_root: out_root.to_path_buf(),
            in_root: in_root.to_path_buf(),
            manifest: Manifest {
                stage: stage.to_string(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                rows: BTreeMap::new(),
                seed: None,
                params: serde_json::Value::Null,
            },
        }
    }

    fn digest(&self, path: &Path) -> Result<FileDigest> {
        let (sha256, bytes) = digest_path(path)?;
        let shown = relative(path, &self.out_root)
            .map(|r| format!("out/{r}"))
            .or_else(|| relative(path, &self.in_root))
            .unwrap_or_else(|| path.display().to_string());
        Ok(FileDigest {
            path: shown,
            sha256,
            bytes,
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        let d = self.digest(path)?;
        self.manifest.inputs.push(d);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        let d = self.digest(path)?;
        self.manifest.outputs.push(d);
        Ok(self)
    }

    pub fn rows(&mut self, name: &str, n: usize) -> &mut Self {
        self.manifest.rows.insert(name.to_string(), n);
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn params(&mut self, params: &impl Serialize) -> Result<&mut Self> {
        self.manifest.params = serde_json::to_value(params)?;
        Ok(self)
    }

    pub fn finish(&self) -> Manifest {
        self.manifest.clone()
    }
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
