//! Portable-pixmap rendering of axis-aligned grid slices with a fixed
//! class palette.

use std::io::Write;
use std::path::Path;

use flow4d_core::{Error, LabelGrid, Result};

/// Fixed palette: background, LV, LVM, RV, LA, RA, unknown.
pub const PALETTE: [[u8; 3]; 7] = [
    [0, 0, 0],
    [220, 50, 47],
    [255, 160, 0],
    [38, 139, 210],
    [133, 153, 0],
    [108, 113, 196],
    [128, 128, 128],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(Error::InvalidArgument(format!(
                "axis must be x, y, or z, got {s:?}"
            ))),
        }
    }

    pub fn extent(&self, dims: (usize, usize, usize)) -> usize {
        match self {
            Axis::X => dims.0,
            Axis::Y => dims.1,
            Axis::Z => dims.2,
        }
    }
}

/// Renders one slice to a binary PPM (P6) file.
pub fn render_slice(grid: &LabelGrid, axis: Axis, index: usize, path: &Path) -> Result<()> {
    if index >= axis.extent(grid.dims) {
        return Err(Error::PlaneOutsideGrid(format!(
            "slice index {index} exceeds extent {} of axis {axis:?}",
            axis.extent(grid.dims)
        )));
    }
    let (nx, ny, nz) = grid.dims;
    let (w, h) = match axis {
        Axis::X => (ny, nz),
        Axis::Y => (nx, nz),
        Axis::Z => (nx, ny),
    };
    let mut pixels = Vec::with_capacity(w * h * 3);
    for row in 0..h {
        for col in 0..w {
            let (x, y, z) = match axis {
                Axis::X => (index, col, row),
                Axis::Y => (col, index, row),
                Axis::Z => (col, row, index),
            };
            let class = grid.get(x, y, z) as usize;
            pixels.extend_from_slice(&PALETTE[class.min(PALETTE.len() - 1)]);
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P6\n{w} {h}\n255\n")?;
    f.write_all(&pixels)?;
    Ok(())
}
