//! Descriptor matrices on disk.
//!
//! Binary layout, little-endian: the 4 bytes `SGMX`, `rows` and `cols` as
//! `u32`, then `rows * cols` `f32` values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use image::{GrayImage, RgbImage};
use ndarray::Array2;

use super::mask::Mask;
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: [u8; 4] = *b"SGMX";

pub fn write_matrix<W: Write>(mut w: W, m: &Array2<f64>) -> Result<()> {
    let (rows, cols) = m.dim();
    let r = u32::try_from(rows).map_err(|_| Error::invalid("too many rows"))?;
    let c = u32::try_from(cols).map_err(|_| Error::invalid("too many columns"))?;
    let mut buf = Vec::with_capacity(12 + 4 * m.len());
    buf.extend_from_slice(&MATRIX_MAGIC);
    buf.extend_from_slice(&r.to_le_bytes());
    buf.extend_from_slice(&c.to_le_bytes());
    for v in m.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<Array2<f64>> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)?;
    if head[..4] != MATRIX_MAGIC {
        return Err(Error::Format("not a descriptor matrix (bad magic)".into()));
    }
    let rows = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != rows * cols * 4 {
        return Err(Error::Format(format!(
            "matrix {rows}x{cols} needs {} bytes, found {}",
            rows * cols * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut buf = Vec::new();
    write_matrix(&mut buf, m)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    read_matrix(std::fs::File::open(path)?)
}

/// Comma-separated rows, no header.
pub fn matrix_to_csv(m: &Array2<f64>) -> String {
    let mut s = String::new();
    for row in m.outer_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn matrix_from_csv(text: &str) -> Result<Array2<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let vals: Vec<f64> = line
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("{c:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if *cols.get_or_insert(vals.len()) != vals.len() {
            return Err(Error::Format(format!(
                "row {rows} has {} columns",
                vals.len()
            )));
        }
        data.extend(vals);
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data)
        .map_err(|e| Error::Format(e.to_string()))
}

/// PNG or PPM, by content.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path)?.to_luma8())
}

/// Single-channel PNG; values above 127 are set.
pub fn load_mask(path: &Path) -> Result<Mask> {
    Ok(Mask::from_gray(&load_gray(path)?))
}

pub fn save_mask(path: &Path, m: &Mask) -> Result<()> {
    m.to_gray().save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let m = Array2::from_shape_fn((3, 5), |(i, j)| i as f64 * 0.5 - j as f64);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(buf.len(), 12 + 60);
        assert_eq!(&buf[..4], b"SGMX");
        assert_eq!(buf[4..8], 3u32.to_le_bytes());
        assert_eq!(read_matrix(buf.as_slice()).unwrap(), m);
        buf.pop();
        assert!(matches!(read_matrix(buf.as_slice()), Err(Error::Format(_))));
        buf[0] = b'X';
        assert!(read_matrix(buf.as_slice()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let m = Array2::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 / 7.0);
        assert_eq!(matrix_from_csv(&matrix_to_csv(&m)).unwrap(), m);
        assert!(matrix_from_csv("1,2\n3\n").is_err());
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = Mask::polygon(12, 9, &[(1.0, 1.0), (10.0, 2.0), (4.0, 8.0)]);
        save_mask(&p, &m).unwrap();
        assert_eq!(load_mask(&p).unwrap(), m);
    }
}
