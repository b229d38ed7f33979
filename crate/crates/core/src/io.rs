//! Binary array files with JSON sidecars, hashing, and PGM image output.
//!
//! Conventions: numeric arrays are little-endian f64; complex arrays are
//! interleaved (re, im) f64 pairs. Every binary file gets a JSON sidecar
//! describing its contents.

use crate::error::Result;
use num_complex::Complex;
use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write;
use std::path::Path;

pub fn write_f64s(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(crate::Error::Parse {
            path: path.display().to_string(),
            detail: format!("length {} is not a multiple of 8", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_complex(path: &Path, data: &[Complex<f64>]) -> Result<()> {
    let mut flat = Vec::with_capacity(data.len() * 2);
    for z in data {
        flat.push(z.re);
        flat.push(z.im);
    }
    write_f64s(path, &flat)
}

pub fn read_complex(path: &Path) -> Result<Vec<Complex<f64>>> {
    let flat = read_f64s(path)?;
    if flat.len() % 2 != 0 {
        return Err(crate::Error::Parse {
            path: path.display().to_string(),
            detail: "odd number of scalars in complex file".into(),
        });
    }
    Ok(flat
        .chunks_exact(2)
        .map(|c| Complex::new(c[0], c[1]))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&s)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub fn hash_f64s(data: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    sha256_hex(&bytes)
}

pub fn hash_complex(data: &[Complex<f64>]) -> String {
    let mut bytes = Vec::with_capacity(data.len() * 16);
    for z in data {
        bytes.extend_from_slice(&z.re.to_le_bytes());
        bytes.extend_from_slice(&z.im.to_le_bytes());
    }
    sha256_hex(&bytes)
}

/// 16-bit grayscale PGM (binary P5, big-endian samples per the format).
/// Values are scaled by `data_range` onto [0, 65535] and clipped.
pub fn write_pgm16(path: &Path, img: &[f64], h: usize, w: usize, data_range: f64) -> Result<()> {
    assert_eq!(img.len(), h * w);
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{w} {h}\n65535\n")?;
    let mut bytes = Vec::with_capacity(h * w * 2);
    for &v in img {
        let scaled = (v / data_range * 65535.0).clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&scaled.to_be_bytes());
    }
    f.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_roundtrip() {
        let dir = std::env::temp_dir().join("mrfkit-io-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("vals.bin");
        let data = vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE];
        write_f64s(&path, &data).unwrap();
        assert_eq!(read_f64s(&path).unwrap(), data);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(hash_f64s(&[1.0, 2.0]), hash_f64s(&[1.0, 2.0]));
        assert_ne!(hash_f64s(&[1.0, 2.0]), hash_f64s(&[2.0, 1.0]));
    }
}
