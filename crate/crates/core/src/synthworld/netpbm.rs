//! Binary PPM (P6) and PGM (P5) reading and writing.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Interleaved samples; 16-bit images are stored big-endian, two bytes
    /// per sample, exactly as in the file.
    pub data: Vec<u8>,
}

fn header(magic: &str, width: usize, height: usize, maxval: u16) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n{maxval}\n").into_bytes()
}

fn write(path: &Path, mut bytes: Vec<u8>, data: &[u8]) -> Result<()> {
    bytes.extend_from_slice(data);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    debug_assert_eq!(rgb.len(), 3 * width * height);
    write(path, header("P6", width, height, 255), rgb)
}

pub fn write_pgm8(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    debug_assert_eq!(gray.len(), width * height);
    write(path, header("P5", width, height, 255), gray)
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<()> {
    let data: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    write(path, header("P5", width, height, 65535), &data)
}

/// Reads a P5 or P6 file and checks its magic number.
pub fn read(path: &Path, magic: &str) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::format(path, m.to_string());
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let m = token()?;
    if m != magic {
        return Err(bad(&format!("expected {magic}, found {m}")));
    }
    let num = |s: String| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("invalid header values"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let channels = if magic == "P6" { 3 } else { 1 };
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let need = width * height * channels * bytes_per;
    if bytes.len() < pos + need {
        return Err(bad("truncated raster"));
    }
    Ok(Image {
        width,
        height,
        maxval: maxval as u16,
        data: bytes[pos..pos + need].to_vec(),
    })
}

impl Image {
    pub fn samples16(&self) -> Vec<u16> {
        self.data
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    }
}
