//! Artifact writer. Every file goes through one writer so the manifest
//! lists exactly what was written, with its SHA-256.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::spectral::io::{encode, FieldMeta};
use crate::spectral::Field;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: String,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Pretty JSON with a trailing newline. Key order follows field declaration order.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

/// CSV with a header row and RFC 4180 quoting.
pub fn to_csv(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let bad = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(bad)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::Contract(format!("csv row has {} cells, header has {}", r.len(), header.len())));
        }
        w.write_record(r).map_err(bad)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Shortest round-trip representation.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub struct ArtifactWriter {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(ArtifactWriter { root: root.to_path_buf(), entries: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        if name == MANIFEST || self.entries.iter().any(|e| e.path == name) {
            return Err(Error::Contract(format!("artifact `{name}` written twice")));
        }
        let path = self.root.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes)?;
        self.entries.push(ManifestEntry { path: name.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write_bytes(name, &to_json(value)?)
    }

    pub fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf> {
        self.write_bytes(name, &to_csv(header, rows)?)
    }

    /// `<stem>.bin` plus the `<stem>.json` sidecar.
    pub fn write_field(&mut self, stem: &str, field: &Field, s: f64) -> Result<PathBuf> {
        let path = self.write_bytes(&format!("{stem}.bin"), &encode(field, s))?;
        let name = Path::new(stem).file_name().and_then(|n| n.to_str()).unwrap_or(stem);
        self.write_json(&format!("{stem}.json"), &FieldMeta::for_field(name, field, s))?;
        Ok(path)
    }

    /// Writes `manifest.json`, files sorted by path.
    pub fn finish(mut self, mode: &str, seed: u64) -> Result<Manifest> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest { mode: mode.to_string(), seed, files: self.entries };
        fs::write(self.root.join(MANIFEST), to_json(&manifest)?)?;
        Ok(manifest)
    }
}

/// Recomputes every hash listed in the manifest under `root`.
pub fn verify_manifest(root: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(root.join(MANIFEST))?)?;
    for e in &manifest.files {
        let bytes = fs::read(root.join(&e.path))?;
        if sha256_hex(&bytes) != e.sha256 || bytes.len() as u64 != e.bytes {
            return Err(Error::Contract(format!("manifest hash mismatch for `{}`", e.path)));
        }
    }
    Ok(manifest)
}
