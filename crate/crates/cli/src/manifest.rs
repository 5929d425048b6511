//! Content-hash manifest of an output directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Every file under `root` except the manifest itself, sorted by path.
pub fn collect(root: &Path) -> io::Result<Vec<ManifestEntry>> {
    let mut files = Vec::new();
    walk(root, &mut files)?;
    let mut entries = Vec::new();
    for f in files {
        let rel: Vec<String> = f
            .strip_prefix(root)
            .expect("walked under root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        let rel = rel.join("/");
        if rel == MANIFEST_NAME {
            continue;
        }
        let data = fs::read(&f)?;
        entries.push(ManifestEntry { path: rel, bytes: data.len() as u64, sha256: sha256_hex(&data) });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(entries)
}

pub fn write(root: &Path) -> relmob_core::Result<Vec<ManifestEntry>> {
    let io_err = |e: io::Error| relmob_core::Error::Data(format!("manifest of {}: {e}", root.display()));
    let entries = collect(root).map_err(io_err)?;
    let mut w = relmob_core::ingest::CsvOut::create(&root.join(MANIFEST_NAME), &["path", "bytes", "sha256"])?;
    for e in &entries {
        w.row([e.path.clone(), e.bytes.to_string(), e.sha256.clone()])?;
    }
    w.finish()?;
    Ok(entries)
}

/// Re-hashes the directory and compares it with the manifest on disk.
pub fn verify(root: &Path) -> relmob_core::Result<bool> {
    let mut r = csv::Reader::from_path(root.join(MANIFEST_NAME))
        .map_err(|e| relmob_core::Error::Data(e.to_string()))?;
    let mut listed = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| relmob_core::Error::Data(e.to_string()))?;
        listed.push(ManifestEntry {
            path: rec[0].to_string(),
            bytes: rec[1].parse().unwrap_or(u64::MAX),
            sha256: rec[2].to_string(),
        });
    }
    let actual = collect(root).map_err(|e| relmob_core::Error::Data(e.to_string()))?;
    Ok(listed == actual)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
        fs::write(dir.path().join("sub/b.svg"), "<svg/>").unwrap();
        let entries = write(dir.path()).unwrap();
        assert_eq!(entries.iter().map(|e| e.path.as_str()).collect::<Vec<_>>(), ["a.csv", "sub/b.svg"]);
        assert!(verify(dir.path()).unwrap());
        fs::write(dir.path().join("a.csv"), "x\n2\n").unwrap();
        assert!(!verify(dir.path()).unwrap());
    }
}
