use std::io::Write;
use std::path::Path;

use crate::error::{invalid, io_err, Error, Result};

/// `height × width` grid of values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl VisibilityMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        VisibilityMap { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(col, row));
            }
        }
        VisibilityMap { width, height, data }
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1.0).count()
    }

    /// Window `[col0, col0+w) × [row0, row0+h)`.
    pub fn crop(&self, col0: usize, row0: usize, w: usize, h: usize) -> VisibilityMap {
        VisibilityMap::from_fn(w, h, |c, r| self.get(col0 + c, row0 + r))
    }

    /// Binary PGM (P5), one byte per pixel, `round(255·v)`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&self.to_pgm()).map_err(io_err(path))
    }

    pub fn from_pgm(bytes: &[u8], path: &Path) -> Result<Self> {
        let (w, h, payload) = parse_netpbm(bytes, b"P5", path)?;
        if payload.len() != w * h {
            return Err(perr(path, format!("expected {} bytes of pixel data, found {}", w * h, payload.len())));
        }
        Ok(VisibilityMap { width: w, height: h, data: payload.iter().map(|&b| b as f64 / 255.0).collect() })
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        VisibilityMap::from_pgm(&bytes, path)
    }

    pub fn check_same_extent(&self, other: &VisibilityMap) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(invalid(format!(
                "visibility maps differ in extent: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

fn perr(path: &Path, reason: String) -> Error {
    Error::Parse { path: path.to_path_buf(), reason }
}

/// Parses a binary netpbm header with maxval 255; returns `(width, height, payload)`.
pub fn parse_netpbm<'a>(bytes: &'a [u8], magic: &[u8], path: &Path) -> Result<(usize, usize, &'a [u8])> {
    if !bytes.starts_with(magic) {
        return Err(perr(path, format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let mut pos = magic.len();
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr(path, "malformed header".into()))?;
    }
    if fields[2] != 255 {
        return Err(perr(path, format!("unsupported maxval {}", fields[2])));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(perr(path, "header not terminated".into()));
    }
    Ok((fields[0], fields[1], &bytes[pos + 1..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_roundtrip_binary() {
        let m = VisibilityMap::from_fn(5, 3, |c, r| ((c + r) % 2) as f64);
        let bytes = m.to_pgm();
        assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(&bytes[bytes.len() - 15..bytes.len() - 13], &[0, 255]);
        let back = VisibilityMap::from_pgm(&bytes, Path::new("m.pgm")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn pgm_rejects_truncation() {
        let m = VisibilityMap::zeros(4, 4);
        let bytes = m.to_pgm();
        assert!(VisibilityMap::from_pgm(&bytes[..bytes.len() - 1], Path::new("m.pgm")).is_err());
        assert!(VisibilityMap::from_pgm(b"P6\n1 1\n255\n\0", Path::new("m.pgm")).is_err());
    }
}
