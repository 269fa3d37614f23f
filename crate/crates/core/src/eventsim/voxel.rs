use crate::error::{Error, Result};
use crate::numgrid::{Real, Tensor};

use super::Event;

/// Threshold on normal-light voxels for the restoration target mask.
pub const GT_MASK_THRESHOLD: f64 = 0.1;

/// Channel index of (polarity group, temporal bin, colour) in a grid with
/// `bins` temporal bins: polarity-major, then bin, then colour.
#[inline]
pub fn voxel_index(group: usize, bin: usize, channel: usize, bins: usize) -> usize {
    group * bins * 3 + bin * 3 + channel
}

/// Event voxel grid with `2 * bins * 3` channels of non-negative magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    pub values: Tensor<f64>,
    pub bins: usize,
    pub t0: f64,
    pub tn: f64,
}

impl VoxelGrid {
    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Accumulate events with a triangular temporal kernel, separately for each
/// (polarity, colour) group.
///
/// With `bins = 1` every event lands wholly in the single bin.
pub fn voxelize(events: &[Event], bins: usize, height: usize, width: usize, t0: f64, tn: f64) -> Result<VoxelGrid> {
    if bins == 0 || height == 0 || width == 0 {
        return Err(Error::pre(format!(
            "voxel grid {bins} bins x {height} x {width} is empty"
        )));
    }
    if !(tn > t0) {
        return Err(Error::pre(format!("voxel time span [{t0}, {tn}] is empty")));
    }
    let channels = 2 * bins * 3;
    let plane = height * width;
    let mut grid = vec![0.0f64; channels * plane];
    let span = tn - t0;
    let last = (bins - 1) as f64;
    for e in events {
        let t = e.t as f64;
        if t < t0 || t > tn {
            return Err(Error::pre(format!("event at t={t} outside [{t0}, {tn}]")));
        }
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= width || y >= height || e.channel > 2 {
            return Err(Error::pre(format!(
                "event ({x}, {y}, channel {}) outside a {height}x{width} frame",
                e.channel
            )));
        }
        let pix = y * width + x;
        let group = e.polarity.group();
        let c = e.channel as usize;
        if bins == 1 {
            grid[voxel_index(group, 0, c, 1) * plane + pix] += 1.0;
            continue;
        }
        let pos = (t - t0) / span * last;
        let k0 = pos.floor() as usize;
        for k in [k0, k0 + 1] {
            if k < bins {
                let w = 1.0 - (k as f64 - pos).abs();
                if w > 0.0 {
                    grid[voxel_index(group, k, c, bins) * plane + pix] += w;
                }
            }
        }
    }
    Ok(VoxelGrid {
        values: Tensor::from_vec(&[channels, height, width], grid)?,
        bins,
        t0,
        tn,
    })
}

/// Binary mask of voxels at or above `threshold`.
pub fn gt_voxel_mask<T: Real>(grid: &Tensor<T>, threshold: f64) -> Tensor<T> {
    let th = T::c(threshold);
    grid.map(|v| if v >= th { T::one() } else { T::zero() })
}
