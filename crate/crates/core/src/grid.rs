//! Voxel label grids and cyclic shape sequences, plus their on-disk formats.
//!
//! A [`LabelGrid`] stores one class id per voxel over the six classes
//! background, LV, LVM, RV, LA, RA. Voxels are laid out x-fastest.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Number of anatomical classes including background.
pub const NUM_CLASSES: usize = 6;

/// Class id used by sparse grids for voxels not covered by any slice.
/// Not a valid label in a full [`LabelGrid`].
pub const UNKNOWN_CLASS: u8 = 6;

pub const CLASS_BACKGROUND: u8 = 0;
pub const CLASS_LV: u8 = 1;
pub const CLASS_LVM: u8 = 2;
pub const CLASS_RV: u8 = 3;
pub const CLASS_LA: u8 = 4;
pub const CLASS_RA: u8 = 5;

pub const CLASS_NAMES: [&str; 6] = ["background", "LV", "LVM", "RV", "LA", "RA"];

/// 3D voxel map of class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub dims: (usize, usize, usize),
    pub voxel_size: f64,
    /// One class id per voxel, x-fastest.
    pub labels: Vec<u8>,
}

impl LabelGrid {
    pub fn new(dims: (usize, usize, usize), voxel_size: f64) -> Self {
        LabelGrid {
            dims,
            voxel_size,
            labels: vec![0u8; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, class: u8) {
        let i = self.index(x, y, z);
        self.labels[i] = class;
    }

    /// Nearest-voxel lookup at a continuous grid coordinate.
    /// Returns `None` when the rounded coordinate falls outside the grid.
    pub fn sample_nearest(&self, p: [f64; 3]) -> Option<u8> {
        let x = p[0].round();
        let y = p[1].round();
        let z = p[2].round();
        if x < 0.0 || y < 0.0 || z < 0.0 {
            return None;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims.0 || y >= self.dims.1 || z >= self.dims.2 {
            return None;
        }
        Some(self.get(x, y, z))
    }

    /// Voxel count of one class.
    pub fn class_volume(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }

    pub fn same_dims(&self, other: &LabelGrid) -> bool {
        self.dims == other.dims
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(
            w,
            "F4DGRID v1 {} {} {} {}",
            self.dims.0, self.dims.1, self.dims.2, self.voxel_size
        )?;
        w.write_all(&self.labels)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let header = read_header_line(r)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 6 || parts[0] != "F4DGRID" || parts[1] != "v1" {
            return Err(Error::FileFormat(format!("bad grid header: {header:?}")));
        }
        let nx: usize = parse_field(parts[2], "nx")?;
        let ny: usize = parse_field(parts[3], "ny")?;
        let nz: usize = parse_field(parts[4], "nz")?;
        let voxel_size: f64 = parse_field(parts[5], "voxel_size")?;
        let mut labels = vec![0u8; nx * ny * nz];
        r.read_exact(&mut labels)?;
        Ok(LabelGrid {
            dims: (nx, ny, nz),
            voxel_size,
            labels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

/// One cardiac cycle: M frames sharing dims and voxel size.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSequence {
    pub frames: Vec<LabelGrid>,
}

impl ShapeSequence {
    pub fn new(frames: Vec<LabelGrid>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Empty("shape sequence has no frames".into()));
        }
        let dims = frames[0].dims;
        for (i, f) in frames.iter().enumerate() {
            if f.dims != dims {
                return Err(Error::dim(
                    format!("{dims:?}"),
                    format!("{:?}", f.dims),
                    format!("frame {i}"),
                ));
            }
        }
        Ok(ShapeSequence { frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "F4DSEQ v1 {}", self.frames.len())?;
        for f in &self.frames {
            f.write_to(w)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let header = read_header_line(r)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "F4DSEQ" || parts[1] != "v1" {
            return Err(Error::FileFormat(format!("bad sequence header: {header:?}")));
        }
        let m: usize = parse_field(parts[2], "M")?;
        let mut frames = Vec::with_capacity(m);
        for _ in 0..m {
            frames.push(LabelGrid::read_from(r)?);
        }
        ShapeSequence::new(frames)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn read_header_line(r: &mut impl Read) -> Result<String> {
    let mut bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            break;
        }
        bytes.push(byte[0]);
        if bytes.len() > 256 {
            return Err(Error::FileFormat("header line too long".into()));
        }
    }
    String::from_utf8(bytes).map_err(|_| Error::FileFormat("non-UTF8 header".into()))
}

fn parse_field<T: std::str::FromStr>(s: &str, name: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::FileFormat(format!("bad {name} field: {s:?}")))
}
