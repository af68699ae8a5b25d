//! Self-describing binary container for datasets and models.
//!
//! Layout (all integers little endian):
//!
//! ```text
//! magic    8 bytes  "KBMPCBIN"
//! version  u32
//! hlen     u64      length of the JSON header
//! header   hlen bytes of UTF-8 JSON
//! count    u64      number of f64 values
//! payload  count * 8 bytes, f64 little endian
//! digest   32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"KBMPCBIN";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode<H: Serialize>(header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let h = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(8 + 4 + 8 + h.len() + 8 + payload.len() * 8 + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(h.len() as u64).to_le_bytes());
    buf.extend_from_slice(&h);
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
    if bytes.len() < n {
        return None;
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Some(head)
}

/// Parses and verifies a container, returning the header and payload.
pub fn decode<H: DeserializeOwned>(bytes: &[u8], origin: &str) -> Result<(H, Vec<f64>)> {
    let bad = |reason: &str| Error::ModelFormat {
        path: origin.into(),
        reason: reason.to_string(),
    };
    if bytes.len() < 32 {
        return Err(bad("file too short"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let mut rest = body;
    if take(&mut rest, 8) != Some(&MAGIC[..]) {
        return Err(bad("not a kbmpc container"));
    }
    let version = u32::from_le_bytes(take(&mut rest, 4).ok_or_else(|| bad("truncated"))?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(take(&mut rest, 8).ok_or_else(|| bad("truncated"))?.try_into().unwrap());
    let header = take(&mut rest, hlen as usize).ok_or_else(|| bad("truncated header"))?;
    let count = u64::from_le_bytes(take(&mut rest, 8).ok_or_else(|| bad("truncated"))?.try_into().unwrap());
    if rest.len() as u64 != count.saturating_mul(8) {
        return Err(bad("payload length does not match its declared size"));
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    let header: H = serde_json::from_slice(header).map_err(|e| bad(&format!("header: {e}")))?;
    let payload = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

pub fn write_file<H: Serialize>(path: &Path, header: &H, payload: &[f64]) -> Result<()> {
    let bytes = encode(header, payload)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::{json, Value};

    #[test]
    fn round_trip_is_bit_exact() {
        let payload = [0.1, -0.0, f64::MIN_POSITIVE, 1e300, f64::NAN];
        let bytes = encode(&json!({"k": 1}), &payload).unwrap();
        let (h, back): (Value, _) = decode(&bytes, "mem").unwrap();
        assert_eq!(h["k"], 1);
        let a: Vec<u64> = payload.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_and_corruption_are_detected() {
        let bytes = encode(&json!({}), &[1.0, 2.0, 3.0]).unwrap();
        for cut in [0, 10, 30, bytes.len() - 1] {
            assert!(decode::<Value>(&bytes[..cut], "mem").is_err(), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[25] ^= 1;
        assert!(decode::<Value>(&flipped, "mem").is_err());
    }
}
