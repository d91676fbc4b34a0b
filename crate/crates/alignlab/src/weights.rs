//! MBW1 weight container.
//!
//! Layout: magic bytes `MBW1`, a u32 little-endian header length, a text
//! header with one `name f32 d0xd1x...` line per entry, then the raw
//! little-endian row-major f32 payloads in header order. Round-trips are
//! bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MBW1";

pub fn save(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    let mut header = String::new();
    for (name, t) in entries {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let dims = if dims.is_empty() { "1".to_string() } else { dims.join("x") };
        header.push_str(&format!("{name} f32 {dims}\n"));
    }
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    for (_, t) in entries {
        for &v in t.data().iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|_| Error::Dependency(path.display().to_string()))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[0..4] != MAGIC {
        return Err(Error::WeightFormat(format!(
            "{}: missing MBW1 magic",
            path.display()
        )));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + hlen {
        return Err(Error::WeightFormat(format!("{}: truncated header", path.display())));
    }
    let header = std::str::from_utf8(&bytes[8..8 + hlen])
        .map_err(|_| Error::WeightFormat(format!("{}: header not utf-8", path.display())))?;
    let mut entries = Vec::new();
    let mut off = 8 + hlen;
    for line in header.lines() {
        let mut parts = line.split_whitespace();
        let (name, dtype, dims) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(Error::WeightFormat(format!("bad header line: {line}"))),
        };
        if dtype != "f32" {
            return Err(Error::WeightFormat(format!("unsupported dtype {dtype}")));
        }
        let shape: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::WeightFormat(format!("bad dims: {dims}")))?;
        let n: usize = shape.iter().product();
        let end = off + n * 4;
        if end > bytes.len() {
            return Err(Error::WeightFormat(format!("{}: truncated payload", path.display())));
        }
        let data: Vec<f32> = bytes[off..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off = end;
        entries.push((name.to_string(), Tensor::from_vec(data, &shape)?));
    }
    Ok(entries)
}

/// SHA-256 over the little-endian bytes of the given parameters in order;
/// the frozen-backbone integrity witness.
pub fn checksum(entries: &[(String, Tensor)]) -> String {
    let mut h = Sha256::new();
    for (name, t) in entries {
        h.update(name.as_bytes());
        for &v in t.data().iter() {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("alignlab_mbw1_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("w.mbw");
        let entries = vec![
            (
                "a.weight".to_string(),
                Tensor::from_vec(vec![1.5, -0.0, f32::MIN_POSITIVE, 3.25], &[2, 2]).unwrap(),
            ),
            ("a.bias".to_string(), Tensor::from_vec(vec![0.125; 3], &[3]).unwrap()),
        ];
        save(&path, &entries).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.len(), 2);
        for ((n1, t1), (n2, t2)) in entries.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        assert_eq!(checksum(&entries), checksum(&back));
    }

    #[test]
    fn missing_file_is_dependency_error() {
        let r = load(Path::new("/nonexistent/alignlab.mbw"));
        assert!(matches!(r, Err(Error::Dependency(_))));
    }

    #[test]
    fn checksum_is_order_and_value_sensitive() {
        let a = ("a".to_string(), Tensor::from_vec(vec![1.0], &[1]).unwrap());
        let b = ("b".to_string(), Tensor::from_vec(vec![2.0], &[1]).unwrap());
        let c1 = checksum(&[a.clone(), b.clone()]);
        let c2 = checksum(&[b, a]);
        assert_ne!(c1, c2);
    }
}
