//! Clip directories: `frame_000.ppm, frame_001.ppm, ...` plus, for paired
//! datasets, `clip_XXX/{gt,low}/` with a `meta.txt` sidecar.

use std::path::{Path, PathBuf};

use super::container::write_file;
use super::ppm::{read_ppm, write_ppm};
use crate::error::{Error, Result};
use crate::image::VideoClip;
use crate::scenegen::ClipPair;

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:03}.ppm")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Sorted entries of `dir` whose file name satisfies `keep`.
fn sorted_entries(dir: &Path, keep: impl Fn(&str, &Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_string();
        if keep(&name, &path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn write_clip(dir: impl AsRef<Path>, clip: &VideoClip) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    for (i, f) in clip.frames().iter().enumerate() {
        write_ppm(dir.join(frame_name(i)), f)?;
    }
    Ok(())
}

/// All `*.ppm` files of `dir` in name order, timestamped 0, 1, 2, ...
pub fn read_clip(dir: impl AsRef<Path>) -> Result<VideoClip> {
    let dir = dir.as_ref();
    let paths = sorted_entries(dir, |n, p| n.ends_with(".ppm") && p.is_file())?;
    if paths.is_empty() {
        return Err(Error::pre(format!("no .ppm frames in {}", dir.display())));
    }
    let frames = paths.iter().map(read_ppm).collect::<Result<Vec<_>>>()?;
    VideoClip::from_frames(frames)
}

pub fn write_pair(dir: impl AsRef<Path>, pair: &ClipPair, meta: &str) -> Result<()> {
    let dir = dir.as_ref();
    write_clip(dir.join("gt"), &pair.gt)?;
    write_clip(dir.join("low"), &pair.low)?;
    write_file(&dir.join("meta.txt"), meta.as_bytes())
}

pub fn read_pair(dir: impl AsRef<Path>) -> Result<ClipPair> {
    let dir = dir.as_ref();
    ClipPair::new(read_clip(dir.join("gt"))?, read_clip(dir.join("low"))?)
}

/// Every `clip_*` subdirectory of `root`, in name order.
pub fn read_dataset(root: impl AsRef<Path>) -> Result<Vec<ClipPair>> {
    let root = root.as_ref();
    let dirs = sorted_entries(root, |n, p| n.starts_with("clip_") && p.is_dir())?;
    if dirs.is_empty() {
        return Err(Error::pre(format!("no clip_* directories in {}", root.display())));
    }
    dirs.iter().map(read_pair).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::{synth_pair, DarkeningMode};

    #[test]
    fn dataset_round_trip_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let (_, _, pair) = synth_pair(8, 12, 3, 4, DarkeningMode::Sampled).unwrap();
        write_pair(dir.path().join("clip_001"), &pair, "H=8\n").unwrap();
        let once = read_dataset(dir.path()).unwrap();
        assert_eq!(once.len(), 1);
        assert_eq!(once[0].gt.len(), 3);
        write_pair(dir.path().join("clip_000"), &once[0], "H=8\n").unwrap();
        let twice = read_dataset(dir.path()).unwrap();
        assert_eq!(twice[0], twice[1]);
        assert!(read_dataset(dir.path().join("clip_000/gt")).is_err());
    }
}
