//! PBIR1 raw image files, CSV output and PGM previews.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      5 bytes  "PBIR1"
//! dtype      u8       1 = float32
//! unit       u8       see `FileUnit`
//! reserved   u8       0
//! nx, ny     u32 u32
//! dx, dy     f64 f64  mm
//! seed       u64
//! hash       32 bytes SHA-256 of the canonical config
//! command    u32 length + UTF-8
//! metadata   u32 length + UTF-8 ("key=value" lines)
//! payload    nx·ny float32, row-major, y outer
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pbir_core::{ImageGrid, ImageVolume, Unit};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 5] = b"PBIR1";
pub const DTYPE_F32_LE: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileUnit {
    Hu,
    PerMm,
    Counts,
    LineIntegral,
    Weight,
    /// Noise power spectrum, HU²·mm².
    NpsHu2Mm2,
}

impl FileUnit {
    fn tag(self) -> u8 {
        match self {
            FileUnit::Hu => 0,
            FileUnit::PerMm => 1,
            FileUnit::Counts => 2,
            FileUnit::LineIntegral => 3,
            FileUnit::Weight => 4,
            FileUnit::NpsHu2Mm2 => 5,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => FileUnit::Hu,
            1 => FileUnit::PerMm,
            2 => FileUnit::Counts,
            3 => FileUnit::LineIntegral,
            4 => FileUnit::Weight,
            5 => FileUnit::NpsHu2Mm2,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageFileHeader {
    pub unit: FileUnit,
    pub nx: u32,
    pub ny: u32,
    pub dx: f64,
    pub dy: f64,
    pub seed: u64,
    pub config_hash: [u8; 32],
    pub command: String,
    pub metadata: String,
}

impl ImageFileHeader {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(80 + self.command.len() + self.metadata.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[DTYPE_F32_LE, self.unit.tag(), 0]);
        out.extend_from_slice(&self.nx.to_le_bytes());
        out.extend_from_slice(&self.ny.to_le_bytes());
        out.extend_from_slice(&self.dx.to_le_bytes());
        out.extend_from_slice(&self.dy.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        for s in [&self.command, &self.metadata] {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        out
    }

    /// Parse a header; returns it with the number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> std::result::Result<(Self, usize), String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5)? != MAGIC {
            return Err("not a PBIR1 file".into());
        }
        let fixed = r.take(3)?;
        if fixed[0] != DTYPE_F32_LE {
            return Err(format!("unsupported dtype tag {}", fixed[0]));
        }
        let unit = FileUnit::from_tag(fixed[1]).ok_or_else(|| format!("unknown unit tag {}", fixed[1]))?;
        let nx = u32::from_le_bytes(r.array()?);
        let ny = u32::from_le_bytes(r.array()?);
        let dx = f64::from_le_bytes(r.array()?);
        let dy = f64::from_le_bytes(r.array()?);
        let seed = u64::from_le_bytes(r.array()?);
        let config_hash: [u8; 32] = r.array()?;
        let command = r.string()?;
        let metadata = r.string()?;
        let header = Self {
            unit,
            nx,
            ny,
            dx,
            dy,
            seed,
            config_hash,
            command,
            metadata,
        };
        Ok((header, r.pos))
    }

    pub fn n_values(&self) -> usize {
        self.nx as usize * self.ny as usize
    }

    pub fn grid(&self) -> pbir_core::Result<ImageGrid> {
        ImageGrid::new(self.nx as usize, self.ny as usize, self.dx, self.dy)
    }

    /// Value of `key` in the metadata lines.
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .lines()
            .find_map(|l| l.split_once('=').filter(|(k, _)| *k == key).map(|(_, v)| v))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or("truncated header")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = u32::from_le_bytes(self.array()?) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "header text is not UTF-8".to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub header: ImageFileHeader,
    pub data: Vec<f32>,
}

impl RawImage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.header.encode();
        out.reserve(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let (header, offset) = ImageFileHeader::decode(bytes)?;
        let payload = &bytes[offset..];
        if payload.len() != header.n_values() * 4 {
            return Err(format!(
                "payload has {} bytes, expected {} for {}x{}",
                payload.len(),
                header.n_values() * 4,
                header.nx,
                header.ny
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        Ok(Self { header, data })
    }

    pub fn to_image(&self) -> Result<ImageVolume> {
        let unit = match self.header.unit {
            FileUnit::Hu => Unit::Hu,
            FileUnit::PerMm => Unit::PerMm,
            other => {
                return Err(CliError::Config(format!("expected an image, found {other:?} data")));
            }
        };
        let grid = self.header.grid()?;
        Ok(ImageVolume::from_vec(grid, unit, self.data.iter().map(|&v| v as f64).collect())?)
    }
}

pub fn read_raw(path: &Path, strict_hash: Option<&[u8; 32]>) -> Result<RawImage> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let raw = RawImage::decode(&bytes).map_err(|message| CliError::Format {
        path: path.to_path_buf(),
        message,
    })?;
    if let Some(expected) = strict_hash {
        if &raw.header.config_hash != expected {
            return Err(CliError::HashMismatch {
                path: path.to_path_buf(),
                found: crate::config::hex(&raw.header.config_hash),
                expected: crate::config::hex(expected),
            });
        }
    }
    Ok(raw)
}

/// Fails if any of `paths` exists, unless `force`.
pub fn ensure_fresh(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(CliError::Exists(p.clone())),
        None => Ok(()),
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))
}

/// Write CSV rows (first row is the header).
pub fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(path, e.into_error()))?;
    write_bytes(path, &bytes)
}

pub fn read_csv(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.records().collect::<std::result::Result<_, _>>()?)
}

/// 16-bit binary PGM of an HU image with the given window / level.
pub fn pgm_bytes(image: &ImageVolume, window: f64, level: f64) -> Vec<u8> {
    let hu = image.to_hu();
    let (nx, ny) = (hu.grid.nx, hu.grid.ny);
    let mut out = format!("P5\n{nx} {ny}\n65535\n").into_bytes();
    let lo = level - 0.5 * window;
    for v in &hu.data {
        let g = (((v - lo) / window).clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&g.to_be_bytes());
    }
    out
}
