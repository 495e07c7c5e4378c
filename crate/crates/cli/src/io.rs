//! Artifact directory helpers: deterministic listing and loading of grid
//! and sequence files.

use std::path::{Path, PathBuf};

use flow4d_core::grid::ShapeSequence;
use flow4d_core::{Error, LabelGrid, Result};

pub const GRID_EXT: &str = "f4dgrid";
pub const SEQ_EXT: &str = "f4dseq";

/// Files with one of our extensions, sorted by name for determinism.
pub fn list_artifacts(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        match path.extension().and_then(|e| e.to_str()) {
            Some(GRID_EXT) | Some(SEQ_EXT) => out.push(path),
            _ => {}
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Empty(format!(
            "no .{GRID_EXT}/.{SEQ_EXT} files in {}",
            dir.display()
        )));
    }
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn is_sequence(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()) == Some(SEQ_EXT)
}

/// Loads a file as a list of frames: one frame for a grid file, all
/// frames for a sequence file.
pub fn load_frames(path: &Path) -> Result<Vec<LabelGrid>> {
    if is_sequence(path) {
        Ok(ShapeSequence::load(path)?.frames)
    } else {
        Ok(vec![LabelGrid::load(path)?])
    }
}

/// All frames across every artifact in a directory.
pub fn load_all_frames(dir: &Path) -> Result<Vec<LabelGrid>> {
    let mut frames = Vec::new();
    for path in list_artifacts(dir)? {
        frames.extend(load_frames(&path)?);
    }
    Ok(frames)
}

/// All sequences in a directory (grid files count as 1-frame sequences).
pub fn load_all_sequences(dir: &Path) -> Result<Vec<(String, ShapeSequence)>> {
    list_artifacts(dir)?
        .iter()
        .map(|p| Ok((stem(p), ShapeSequence::new(load_frames(p)?)?)))
        .collect()
}
