use crate::error::{Error, Result};
use crate::eventsim::clip_to_voxels;
use crate::image::{Image, VideoClip};
use crate::numgrid::{Real, Tensor};
use crate::scenegen::ClipPair;

use super::TrainConfig;

/// Low-light voxels `E` and normal-light voxels `G`, both `B x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Sample<T> {
    pub events: Tensor<T>,
    pub target: Tensor<T>,
}

/// Reference dark frame `[3, H, W]`, its low-light voxels `[B, H, W]` and the
/// normal-light reference frame `[3, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Sample<T> {
    pub low: Tensor<T>,
    pub events: Tensor<T>,
    pub gt: Tensor<T>,
}

/// Centre frames of every window of `len` frames that fits inside a clip of
/// `frames` frames; a shorter clip yields its middle frame.
pub fn window_centers(frames: usize, len: usize) -> Vec<usize> {
    let half = len / 2;
    if frames < len {
        return vec![frames / 2];
    }
    (half..frames - (len - 1 - half)).collect()
}

fn voxels<T: Real>(clip: &VideoClip, threshold: f64, cfg: &TrainConfig) -> Result<Tensor<T>> {
    Ok(clip_to_voxels(clip, threshold, cfg.interp_factor, cfg.model.frames)?
        .values
        .cast())
}

fn check_size(pair: &ClipPair, cfg: &TrainConfig) -> Result<()> {
    if pair.gt.height() < cfg.crop || pair.gt.width() < cfg.crop {
        return Err(Error::pre(format!(
            "crop {} exceeds a {}x{} clip",
            cfg.crop,
            pair.gt.height(),
            pair.gt.width()
        )));
    }
    Ok(())
}

pub fn stage1_samples<T: Real>(pairs: &[ClipPair], cfg: &TrainConfig) -> Result<Vec<Stage1Sample<T>>> {
    let n = cfg.model.frames;
    let mut out = Vec::new();
    for pair in pairs {
        check_size(pair, cfg)?;
        for c in window_centers(pair.gt.len(), n) {
            out.push(Stage1Sample {
                events: voxels(&pair.low.window(c, n)?, cfg.low_threshold, cfg)?,
                target: voxels(&pair.gt.window(c, n)?, cfg.normal_threshold, cfg)?,
            });
        }
    }
    Ok(out)
}

pub fn stage2_samples<T: Real>(pairs: &[ClipPair], cfg: &TrainConfig) -> Result<Vec<Stage2Sample<T>>> {
    let n = cfg.model.frames;
    let mut out = Vec::new();
    for pair in pairs {
        check_size(pair, cfg)?;
        for c in window_centers(pair.gt.len(), n) {
            out.push(stage2_sample(&pair.low, Some(&pair.gt.frames()[c]), c, cfg)?);
        }
    }
    Ok(out)
}

/// The stage-2 input for frame `center` of a dark clip, using an
/// edge-replicated window. Without `gt` the target is a copy of the input.
pub fn stage2_sample<T: Real>(
    low: &VideoClip,
    gt: Option<&Image>,
    center: usize,
    cfg: &TrainConfig,
) -> Result<Stage2Sample<T>> {
    let frame = &low.frames()[center];
    Ok(Stage2Sample {
        low: frame.to_chw(),
        events: voxels(&low.window(center, cfg.model.frames)?, cfg.low_threshold, cfg)?,
        gt: gt.unwrap_or(frame).to_chw(),
    })
}

/// Spatial crop of a `[C, H, W]` tensor.
pub fn crop_chw<T: Real>(t: &Tensor<T>, y: usize, x: usize, size: usize) -> Result<Tensor<T>> {
    let s = t.shape();
    if s.len() != 3 || y + size > s[1] || x + size > s[2] {
        return Err(Error::shape("crop", format!("{size}x{size} at ({y},{x}) of {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for r in y..y + size {
            let base = ch * h * w + r * w + x;
            out.extend_from_slice(&t.data()[base..base + size]);
        }
    }
    Tensor::from_vec(&[c, size, size], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::ModelConfig;
    use crate::scenegen::{synth_pair, DarkeningMode};

    #[test]
    fn windows() {
        assert_eq!(window_centers(5, 5), vec![2]);
        assert_eq!(window_centers(7, 5), vec![2, 3, 4]);
        assert_eq!(window_centers(3, 5), vec![1]);
        assert_eq!(window_centers(6, 2), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn crop_picks_the_block() {
        let t = Tensor::from_vec(&[2, 3, 3], (0..18).map(|v| v as f64).collect()).unwrap();
        let c = crop_chw(&t, 1, 1, 2).unwrap();
        assert_eq!(c.data(), &[4.0, 5.0, 7.0, 8.0, 13.0, 14.0, 16.0, 17.0]);
        assert!(crop_chw(&t, 2, 0, 2).is_err());
    }

    #[test]
    fn sample_shapes() {
        let mut cfg = TrainConfig {
            crop: 16,
            model: ModelConfig {
                frames: 3,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        let (_, _, pair) = synth_pair(16, 20, 4, 2, DarkeningMode::Sampled).unwrap();
        let s1 = stage1_samples::<f32>(std::slice::from_ref(&pair), &cfg).unwrap();
        assert_eq!(s1.len(), 2);
        assert_eq!(s1[0].events.shape(), &[18, 16, 20]);
        let s2 = stage2_samples::<f32>(std::slice::from_ref(&pair), &cfg).unwrap();
        assert_eq!(s2[1].gt, pair.gt.frames()[2].to_chw());
        cfg.crop = 24;
        assert!(stage1_samples::<f32>(&[pair], &cfg).is_err());
    }
}
