//! Little-endian binary artifact plumbing: magic/version headers, shared
//! read/write helpers, and the provenance stamp embedded in every artifact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EfrError, Result};

/// Provenance carried by every produced artifact: the hash of the effective
/// configuration and the seed it ran under.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub config_hash: String,
    pub seed: u64,
}

impl ArtifactMeta {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        ArtifactMeta {
            config_hash: config_hash.into(),
            seed,
        }
    }
}

pub(crate) fn format_err(path: &Path, msg: impl Into<String>) -> EfrError {
    EfrError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Buffered writer with the artifact's magic and version already emitted.
pub(crate) fn open_writer(path: &Path, magic: &[u8; 4], version: u32) -> Result<BufWriter<File>> {
    let file = File::create(path).map_err(|e| EfrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(magic).map_err(|e| EfrError::io(path, e))?;
    write_u32(&mut w, path, version)?;
    Ok(w)
}

/// Buffered reader positioned after a validated magic/version header.
pub(crate) fn open_reader(path: &Path, magic: &[u8; 4], version: u32) -> Result<BufReader<File>> {
    let file = File::open(path).map_err(|e| EfrError::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut got = [0u8; 4];
    r.read_exact(&mut got).map_err(|e| EfrError::io(path, e))?;
    if &got != magic {
        return Err(format_err(
            path,
            format!("bad magic {:?}, expected {:?}", got, magic),
        ));
    }
    let got_version = read_u32(&mut r, path)?;
    if got_version != version {
        return Err(format_err(
            path,
            format!("unsupported version {got_version}, expected {version}"),
        ));
    }
    Ok(r)
}

pub(crate) fn write_u32(w: &mut impl Write, path: &Path, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| EfrError::io(path, e))
}

pub(crate) fn write_u64(w: &mut impl Write, path: &Path, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| EfrError::io(path, e))
}

pub(crate) fn write_f64(w: &mut impl Write, path: &Path, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| EfrError::io(path, e))
}

pub(crate) fn write_f32(w: &mut impl Write, path: &Path, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(|e| EfrError::io(path, e))
}

pub(crate) fn write_u8(w: &mut impl Write, path: &Path, v: u8) -> Result<()> {
    w.write_all(&[v]).map_err(|e| EfrError::io(path, e))
}

pub(crate) fn write_str(w: &mut impl Write, path: &Path, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    write_u32(w, path, bytes.len() as u32)?;
    w.write_all(bytes).map_err(|e| EfrError::io(path, e))
}

pub(crate) fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| EfrError::io(path, e))?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| EfrError::io(path, e))?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f64(r: &mut impl Read, path: &Path) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| EfrError::io(path, e))?;
    Ok(f64::from_le_bytes(buf))
}

pub(crate) fn read_f32(r: &mut impl Read, path: &Path) -> Result<f32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| EfrError::io(path, e))?;
    Ok(f32::from_le_bytes(buf))
}

pub(crate) fn read_u8(r: &mut impl Read, path: &Path) -> Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf).map_err(|e| EfrError::io(path, e))?;
    Ok(buf[0])
}

pub(crate) fn read_str(r: &mut impl Read, path: &Path) -> Result<String> {
    let len = read_u32(r, path)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| EfrError::io(path, e))?;
    String::from_utf8(buf).map_err(|e| format_err(path, format!("invalid utf-8 string: {e}")))
}

pub(crate) fn write_meta(w: &mut impl Write, path: &Path, meta: &ArtifactMeta) -> Result<()> {
    write_str(w, path, &meta.config_hash)?;
    write_u64(w, path, meta.seed)
}

pub(crate) fn read_meta(r: &mut impl Read, path: &Path) -> Result<ArtifactMeta> {
    let config_hash = read_str(r, path)?;
    let seed = read_u64(r, path)?;
    Ok(ArtifactMeta { config_hash, seed })
}

/// Write the provenance sidecar for line-oriented text artifacts
/// (`<artifact>.meta.json`).
pub fn write_meta_sidecar(artifact_path: impl AsRef<Path>, meta: &ArtifactMeta, version: u32) -> Result<()> {
    let artifact_path = artifact_path.as_ref();
    let mut name = artifact_path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    let path = artifact_path.with_file_name(name);
    #[derive(Serialize)]
    struct Sidecar<'a> {
        config_hash: &'a str,
        seed: u64,
        format_version: u32,
    }
    let body = serde_json::to_string_pretty(&Sidecar {
        config_hash: &meta.config_hash,
        seed: meta.seed,
        format_version: version,
    })
    .expect("sidecar serialization cannot fail");
    std::fs::write(&path, body + "\n").map_err(|e| EfrError::io(&path, e))
}
