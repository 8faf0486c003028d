use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Where ownership documents come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilingSource {
    /// A directory of `*.xml` documents.
    Local(PathBuf),
    /// A plain-text index (one document URL per line, absolute or relative to
    /// the index URL). Documents are downloaded into `cache_dir`, which is
    /// then listed like a local source.
    Remote { index_url: String, cache_dir: PathBuf },
}

/// Lists document paths in lexicographic order.
pub fn fetch_filing_index(source: &FilingSource) -> Result<Vec<PathBuf>> {
    match source {
        FilingSource::Local(dir) => list_local(dir),
        FilingSource::Remote { index_url, cache_dir } => {
            download_listed(index_url, cache_dir)?;
            list_local(cache_dir)
        }
    }
}

fn list_local(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_xml = path.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("xml"));
        if is_xml && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn resolve(base: &str, entry: &str) -> String {
    if entry.contains("://") {
        return entry.to_string();
    }
    match base.rfind('/') {
        Some(i) => format!("{}/{}", &base[..i], entry.trim_start_matches('/')),
        None => entry.to_string(),
    }
}

fn get(url: &str) -> Result<Vec<u8>> {
    let mut response = ureq::get(url).call().map_err(|e| Error::Http(format!("{url}: {e}")))?;
    let mut body = Vec::new();
    response
        .body_mut()
        .as_reader()
        .read_to_end(&mut body)
        .map_err(|e| Error::Http(format!("{url}: {e}")))?;
    Ok(body)
}

fn download_listed(index_url: &str, cache_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let index = String::from_utf8_lossy(&get(index_url)?).into_owned();
    for line in index
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let url = resolve(index_url, line);
        let name = url.rsplit('/').next().unwrap_or_default();
        if name.is_empty() || name.contains("..") {
            return Err(Error::Http(format!("cannot derive a file name from {url}")));
        }
        let target = cache_dir.join(name);
        if target.exists() {
            continue;
        }
        let body = get(&url)?;
        std::fs::write(&target, body).map_err(|e| Error::io(&target, e))?;
    }
    Ok(())
}
