//! Small file helpers shared by the on-disk formats.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn f32_le_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_f32_le(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Header-prefixed binary container: `u64` little-endian header length, a
/// UTF-8 JSON header, then the raw payload.
pub fn write_with_header(path: &Path, header: &serde_json::Value, payload: &[u8]) -> Result<()> {
    let head = serde_json::to_vec(header)?;
    let mut bytes = Vec::with_capacity(8 + head.len() + payload.len());
    bytes.extend_from_slice(&(head.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&head);
    bytes.extend_from_slice(payload);
    write_atomic(path, &bytes)
}

pub fn read_with_header(path: &Path, kind: &str) -> Result<(serde_json::Value, Vec<u8>)> {
    if !path.exists() {
        return Err(Error::Missing(vec![path.to_path_buf()]));
    }
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::format(kind, "header_length", "file shorter than 8 bytes"));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if n > bytes.len() - 8 {
        return Err(Error::format(
            kind,
            "header_length",
            format!("header of {n} bytes exceeds file size {}", bytes.len()),
        ));
    }
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n])
        .map_err(|e| Error::format(kind, "header", e.to_string()))?;
    Ok((header, bytes[8 + n..].to_vec()))
}
