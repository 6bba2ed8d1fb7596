//! LSEQ container: a fixed little-endian header followed by uncompressed
//! per-frame payloads (RGB image, multi-label, visible class).

use super::{DatasetError, Result};
use crate::render::LabeledFrame;
use std::io::{Read, Write};
use std::path::Path;

pub const LSEQ_MAGIC: &[u8; 4] = b"LSEQ";
pub const LSEQ_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;

const FLAG_HAS_LIQUID: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceHeader {
    pub version: u32,
    pub width: u32,
    pub height: u32,
    pub frames: u32,
    pub sim_config_hash: u64,
    pub render_config_hash: u64,
    pub has_liquid: bool,
}

impl SequenceHeader {
    pub fn frame_bytes(&self) -> usize {
        self.width as usize * self.height as usize * 5
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(LSEQ_MAGIC);
        b[4..8].copy_from_slice(&self.version.to_le_bytes());
        b[8..12].copy_from_slice(&self.width.to_le_bytes());
        b[12..16].copy_from_slice(&self.height.to_le_bytes());
        b[16..20].copy_from_slice(&self.frames.to_le_bytes());
        b[20..28].copy_from_slice(&self.sim_config_hash.to_le_bytes());
        b[28..36].copy_from_slice(&self.render_config_hash.to_le_bytes());
        let flags = if self.has_liquid { FLAG_HAS_LIQUID } else { 0 };
        b[36..40].copy_from_slice(&flags.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; HEADER_LEN]) -> Result<Self> {
        if &b[0..4] != LSEQ_MAGIC {
            return Err(DatasetError::Format(format!("bad magic {:?}", &b[0..4])));
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != LSEQ_VERSION {
            return Err(DatasetError::Format(format!("unsupported version {version}")));
        }
        let h = Self {
            version,
            width: u32_at(8),
            height: u32_at(12),
            frames: u32_at(16),
            sim_config_hash: u64_at(20),
            render_config_hash: u64_at(28),
            has_liquid: u32_at(36) & FLAG_HAS_LIQUID != 0,
        };
        if h.frames == 0 {
            return Err(DatasetError::Format("frame count is zero".into()));
        }
        if h.width == 0 || h.height == 0 {
            return Err(DatasetError::Format(format!("empty frame size {}x{}", h.width, h.height)));
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub header: SequenceHeader,
    pub frames: Vec<LabeledFrame>,
}

pub fn write_sequence(mut w: impl Write, seq: &Sequence) -> Result<()> {
    let h = &seq.header;
    if h.frames as usize != seq.frames.len() || h.frames == 0 {
        return Err(DatasetError::Format(format!("header says {} frames, sequence has {}", h.frames, seq.frames.len())));
    }
    w.write_all(&h.to_bytes())?;
    let plane = h.width as usize * h.height as usize;
    for (k, f) in seq.frames.iter().enumerate() {
        if f.width != h.width as usize || f.height != h.height as usize || f.image.len() != plane * 3 || f.multilabel.len() != plane || f.visible.len() != plane {
            return Err(DatasetError::Format(format!("frame {k} does not match the {}x{} header", h.width, h.height)));
        }
        w.write_all(&f.image)?;
        w.write_all(&f.multilabel)?;
        w.write_all(&f.visible)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_header(mut r: impl Read) -> Result<SequenceHeader> {
    let mut b = [0u8; HEADER_LEN];
    r.read_exact(&mut b)?;
    SequenceHeader::from_bytes(&b)
}

pub fn read_sequence(mut r: impl Read) -> Result<Sequence> {
    let header = read_header(&mut r)?;
    let (w, h) = (header.width as usize, header.height as usize);
    let plane = w * h;
    let mut frames = Vec::with_capacity(header.frames as usize);
    for _ in 0..header.frames {
        let mut buf = vec![0u8; plane * 5];
        r.read_exact(&mut buf)?;
        let visible = buf.split_off(plane * 4);
        let multilabel = buf.split_off(plane * 3);
        frames.push(LabeledFrame { width: w, height: h, image: buf, multilabel, visible });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(DatasetError::Format("trailing bytes after the last frame".into()));
    }
    Ok(Sequence { header, frames })
}

pub fn save_sequence(seq: &Sequence, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_sequence(std::io::BufWriter::new(file), seq)
}

pub fn load_sequence(path: &Path) -> Result<Sequence> {
    read_sequence(std::io::BufReader::new(std::fs::File::open(path)?))
}
