use crate::error::{Error, Result};
use crate::numgrid::{Real, Tensor};

use super::voxel_index;

/// Threshold applied to the max-reduced positive restored voxels.
pub const GUIDANCE_THRESHOLD: f64 = 0.9;

/// Binary H x W map of regions with strong positive events.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceMask {
    pub values: Tensor<f64>,
    pub threshold: f64,
    pub source: (usize, usize),
}

impl GuidanceMask {
    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    /// Fraction of pixels set.
    pub fn coverage(&self) -> f64 {
        self.values.mean()
    }
}

/// Max over the positive bins of each colour, then over colours; resized to
/// `target` by nearest neighbour and binarized with `>= threshold`.
pub fn egdb_mask<T: Real>(
    restored: &Tensor<T>,
    bins: usize,
    target: (usize, usize),
    threshold: f64,
) -> Result<GuidanceMask> {
    let s = restored.shape();
    if s.len() != 3 || s[0] != 2 * bins * 3 || bins == 0 {
        return Err(Error::shape(
            "egdb_mask",
            format!("expected [{}, H, W] voxels, got {s:?}", 2 * bins * 3),
        ));
    }
    if target.0 == 0 || target.1 == 0 {
        return Err(Error::pre("mask target must be at least 1x1"));
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let d = restored.data();
    let mut reduced = vec![f64::NEG_INFINITY; plane];
    for bin in 0..bins {
        for c in 0..3 {
            let ch = voxel_index(0, bin, c, bins);
            for (m, &v) in reduced.iter_mut().zip(&d[ch * plane..(ch + 1) * plane]) {
                *m = m.max(v.as_f64());
            }
        }
    }
    let (th, tw) = target;
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let sy = (y * h / th).min(h - 1);
        for x in 0..tw {
            let sx = (x * w / tw).min(w - 1);
            out.push(if reduced[sy * w + sx] >= threshold { 1.0 } else { 0.0 });
        }
    }
    Ok(GuidanceMask {
        values: Tensor::from_vec(&[th, tw], out)?,
        threshold,
        source: (h, w),
    })
}
