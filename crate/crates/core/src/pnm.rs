//! Minimal binary PGM (P5) and PPM (P6) reading and writing.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

fn write_pnm(path: &Path, magic: &str, width: usize, height: usize, bytes: &[u8]) -> io::Result<()> {
    let mut out = io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "{magic}\n{width} {height}\n255\n")?;
    out.write_all(bytes)?;
    out.flush()
}

/// Write an 8-bit grayscale image, rows top to bottom.
pub fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> io::Result<()> {
    if bytes.len() != width * height {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("{} bytes for a {width}x{height} PGM", bytes.len())));
    }
    write_pnm(path, "P5", width, height, bytes)
}

/// Write an 8-bit RGB image, rows top to bottom, channels interleaved.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> io::Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("{} bytes for a {width}x{height} PPM", rgb.len())));
    }
    write_pnm(path, "P6", width, height, rgb)
}

fn header_token(r: &mut impl BufRead) -> io::Result<String> {
    let mut tok = String::new();
    loop {
        let mut byte = [0u8];
        r.read_exact(&mut byte)?;
        let c = byte[0] as char;
        if c == '#' && tok.is_empty() {
            let mut skip = String::new();
            r.read_line(&mut skip)?;
        } else if c.is_ascii_whitespace() {
            if !tok.is_empty() {
                return Ok(tok);
            }
        } else {
            tok.push(c);
        }
    }
}

/// Read an 8-bit P5 file as `(width, height, bytes)`.
pub fn read_pgm(path: &Path) -> io::Result<(usize, usize, Vec<u8>)> {
    let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let magic = header_token(&mut r)?;
    if magic != "P5" {
        return Err(bad(format!("expected P5, found {magic}")));
    }
    let mut num = || -> io::Result<usize> { header_token(&mut r)?.parse().map_err(|e| bad(format!("bad header: {e}"))) };
    let (w, h, max) = (num()?, num()?, num()?);
    if max != 255 {
        return Err(bad(format!("unsupported maxval {max}")));
    }
    let mut bytes = vec![0; w * h];
    r.read_exact(&mut bytes)?;
    Ok((w, h, bytes))
}
