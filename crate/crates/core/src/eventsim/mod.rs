//! Frame differencing into colour events, voxelization, and the two voxel masks.

mod events;
mod mask;
mod voxel;

pub use events::{generate_events, interpolate_frames, Event, EventStream, Polarity};
pub use mask::{egdb_mask, GuidanceMask, GUIDANCE_THRESHOLD};
pub use voxel::{gt_voxel_mask, voxel_index, voxelize, VoxelGrid, GT_MASK_THRESHOLD};

/// Contrast threshold (8-bit scale) for events from low-light frames.
pub const LOW_LIGHT_THRESHOLD: f64 = 2.0;
/// Contrast threshold (8-bit scale) for events from normal-light frames.
pub const NORMAL_LIGHT_THRESHOLD: f64 = 5.0;
/// Default temporal up-sampling factor before differencing.
pub const DEFAULT_INTERP_FACTOR: usize = 4;

use crate::error::Result;
use crate::image::VideoClip;

/// Interpolate, difference and voxelize a clip into `bins` temporal bins
/// spanning the clip's first to last timestamp.
pub fn clip_to_voxels(clip: &VideoClip, threshold: f64, interp: usize, bins: usize) -> Result<VoxelGrid> {
    let up = interpolate_frames(clip, interp)?;
    let events = generate_events(&up, threshold)?;
    let ts = clip.timestamps();
    voxelize(&events, bins, clip.height(), clip.width(), ts[0], ts[ts.len() - 1])
}
