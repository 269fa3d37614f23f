//! Synthetic normal-light clips and their low-light counterparts.
//!
//! Scenes are moving anti-aliased shapes over a (possibly panning) smooth
//! noise background. Darkening follows `S_l = beta * (alpha * S_g)^gamma + n`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{Image, VideoClip};

/// Clips darker than this on average are not accepted as normal-light.
pub const MIN_MEAN_BRIGHTNESS: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeKind {
    Rectangle { half_width: f64, half_height: f64 },
    Disk { radius: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneShape {
    pub kind: ShapeKind,
    pub color: [f64; 3],
    /// Centre `(x, y)` at frame 0, in pixels.
    pub position: (f64, f64),
    /// Pixels per frame.
    pub velocity: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Background {
    Constant([f64; 3]),
    /// Value noise on a lattice of `cell` pixels, `base ± amplitude` per
    /// channel, translated by `pan` pixels per frame.
    Noise {
        base: [f64; 3],
        amplitude: f64,
        cell: f64,
        pan: (f64, f64),
    },
}

impl Background {
    fn has_variance(&self) -> bool {
        matches!(self, Background::Noise { amplitude, .. } if *amplitude > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub shapes: Vec<SceneShape>,
    pub background: Background,
    /// Global gain applied to the composited frame.
    pub brightness: f64,
}

impl SceneSpec {
    /// A random scene with 2 to 4 shapes over a panning noise background.
    pub fn random<R: Rng + ?Sized>(height: usize, width: usize, frames: usize, rng: &mut R) -> Self {
        let (hf, wf) = (height as f64, width as f64);
        let size_hi = (hf.min(wf) / 6.0).max(3.5);
        let count = rng.gen_range(2..=4);
        let shapes = (0..count)
            .map(|_| {
                let kind = if rng.gen_bool(0.5) {
                    ShapeKind::Disk {
                        radius: rng.gen_range(3.0..size_hi),
                    }
                } else {
                    ShapeKind::Rectangle {
                        half_width: rng.gen_range(3.0..size_hi),
                        half_height: rng.gen_range(3.0..size_hi),
                    }
                };
                SceneShape {
                    kind,
                    color: [rng.gen(), rng.gen(), rng.gen()],
                    position: (rng.gen_range(0.0..wf), rng.gen_range(0.0..hf)),
                    velocity: (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                }
            })
            .collect();
        let background = Background::Noise {
            base: [
                rng.gen_range(0.35..0.75),
                rng.gen_range(0.35..0.75),
                rng.gen_range(0.35..0.75),
            ],
            amplitude: rng.gen_range(0.1..0.25),
            cell: rng.gen_range(6.0..14.0),
            pan: (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)),
        };
        Self {
            height,
            width,
            frames,
            shapes,
            background,
            brightness: rng.gen_range(0.7..1.0),
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64, c: usize) -> f64 {
    let h = splitmix(seed ^ splitmix((ix as u64).wrapping_mul(0x1f1f_1f1f) ^ splitmix(iy as u64 ^ ((c as u64) << 56))));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(seed: u64, u: f64, v: f64, c: usize) -> f64 {
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(seed, ix, iy, c);
    let b = lattice(seed, ix + 1, iy, c);
    let d = lattice(seed, ix, iy + 1, c);
    let e = lattice(seed, ix + 1, iy + 1, c);
    let top = a + (b - a) * sx;
    let bot = d + (e - d) * sx;
    top + (bot - top) * sy
}

fn blur3(img: &Image) -> Image {
    const K: [f64; 3] = [0.25, 0.5, 0.25];
    let (h, w) = (img.height() as isize, img.width() as isize);
    let at = |y: isize, x: isize, c: usize| img.get(y.clamp(0, h - 1) as usize, x.clamp(0, w - 1) as usize, c);
    Image::from_fn(img.height(), img.width(), |y, x, c| {
        let (y, x) = (y as isize, x as isize);
        let mut s = 0.0;
        for (dy, ky) in K.iter().enumerate() {
            for (dx, kx) in K.iter().enumerate() {
                s += ky * kx * at(y + dy as isize - 1, x + dx as isize - 1, c);
            }
        }
        s
    })
}

fn coverage(kind: &ShapeKind, dx: f64, dy: f64) -> f64 {
    let sd = match *kind {
        ShapeKind::Disk { radius } => (dx * dx + dy * dy).sqrt() - radius,
        ShapeKind::Rectangle {
            half_width,
            half_height,
        } => (dx.abs() - half_width).max(dy.abs() - half_height),
    };
    // one-pixel soft edge centred on the boundary
    (0.5 - sd).clamp(0.0, 1.0)
}

fn background_frame(bg: &Background, h: usize, w: usize, t: f64, seed: u64) -> Image {
    match bg {
        Background::Constant(rgb) => Image::from_fn(h, w, |_, _, c| rgb[c]),
        Background::Noise {
            base,
            amplitude,
            cell,
            pan,
        } => {
            let raw = Image::from_fn(h, w, |y, x, c| {
                let u = (x as f64 - pan.0 * t) / cell;
                let v = (y as f64 - pan.1 * t) / cell;
                base[c] + amplitude * (2.0 * value_noise(seed, u, v, c) - 1.0)
            });
            blur3(&raw)
        }
    }
}

/// Render every frame of `spec`; `seed` drives the background texture.
pub fn render_clip(spec: &SceneSpec, seed: u64) -> Result<VideoClip> {
    if spec.height == 0 || spec.width == 0 {
        return Err(Error::pre("scene resolution must be positive"));
    }
    if spec.frames < 2 {
        return Err(Error::pre(format!(
            "a scene needs at least 2 frames, got {}",
            spec.frames
        )));
    }
    if !(0.0..=1.0).contains(&spec.brightness) || spec.brightness <= 0.0 {
        return Err(Error::pre(format!("brightness {} outside (0, 1]", spec.brightness)));
    }
    if spec.shapes.is_empty() && !spec.background.has_variance() {
        return Err(Error::pre(
            "scene has no shapes and a flat background; it would produce no events",
        ));
    }
    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let tf = t as f64;
        let mut img = background_frame(&spec.background, spec.height, spec.width, tf, seed);
        for shape in &spec.shapes {
            let cx = shape.position.0 + shape.velocity.0 * tf;
            let cy = shape.position.1 + shape.velocity.1 * tf;
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let a = coverage(&shape.kind, x as f64 - cx, y as f64 - cy);
                    if a > 0.0 {
                        for c in 0..3 {
                            let v = img.get(y, x, c);
                            img.set(y, x, c, v + a * (shape.color[c] - v));
                        }
                    }
                }
            }
        }
        for v in img.data_mut() {
            *v = (*v * spec.brightness).clamp(0.0, 1.0);
        }
        frames.push(img);
    }
    let clip = VideoClip::from_frames(frames)?;
    let mean = clip.mean_brightness();
    if mean < MIN_MEAN_BRIGHTNESS {
        return Err(Error::pre(format!(
            "mean brightness {mean:.3} below {MIN_MEAN_BRIGHTNESS}"
        )));
    }
    Ok(clip)
}

/// Draw random scenes until one renders with acceptable brightness.
pub fn render_random_clip(height: usize, width: usize, frames: usize, seed: u64) -> Result<(SceneSpec, VideoClip)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..64 {
        let spec = SceneSpec::random(height, width, frames, &mut rng);
        let texture_seed = rng.gen();
        match render_clip(&spec, texture_seed) {
            Ok(clip) => return Ok((spec, clip)),
            Err(Error::Precondition(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::pre("no acceptable random scene after 64 draws"))
}

/// Darkening parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationParams {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl DegradationParams {
    /// Fixed evaluation setting.
    pub fn test_preset(seed: u64) -> Self {
        Self {
            gamma: 2.75,
            alpha: 0.95,
            beta: 0.8,
            sigma: 0.01,
            seed,
        }
    }

    pub fn identity() -> Self {
        Self {
            gamma: 1.0,
            alpha: 1.0,
            beta: 1.0,
            sigma: 0.0,
            seed: 0,
        }
    }

    /// Noise-free darkening of one intensity.
    pub fn darken(&self, v: f64) -> f64 {
        self.beta * (self.alpha * v).powf(self.gamma)
    }
}

/// Training-time parameters: gamma ~ U(2, 3.5), alpha ~ U(0.9, 1),
/// beta ~ U(0.5, 1), sigma ~ U(0, 0.02).
pub fn sample_degradation_params(seed: u64) -> DegradationParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DegradationParams {
        gamma: rng.gen_range(2.0..3.5),
        alpha: rng.gen_range(0.9..1.0),
        beta: rng.gen_range(0.5..1.0),
        sigma: rng.gen_range(0.0..0.02),
        seed: rng.gen(),
    }
}

/// Darken every frame; Gaussian noise is seeded by `params.seed` and the
/// result is clamped to `[0, 1]`.
pub fn degrade_clip(clip: &VideoClip, params: &DegradationParams) -> Result<VideoClip> {
    if !(params.gamma > 0.0) {
        return Err(Error::pre(format!("gamma must be positive, got {}", params.gamma)));
    }
    if !(params.sigma >= 0.0) {
        return Err(Error::pre(format!(
            "noise std must be non-negative, got {}",
            params.sigma
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = Normal::new(0.0, params.sigma.max(f64::MIN_POSITIVE)).expect("valid std");
    let frames = clip
        .frames()
        .iter()
        .map(|f| {
            let mut out = f.clone();
            for v in out.data_mut() {
                let n = if params.sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                *v = (params.darken(*v) + n).clamp(0.0, 1.0);
            }
            out
        })
        .collect();
    VideoClip::new(frames, clip.timestamps().to_vec())
}

/// A normal-light clip and its darkened counterpart, frame-aligned.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipPair {
    pub gt: VideoClip,
    pub low: VideoClip,
}

impl ClipPair {
    pub fn new(gt: VideoClip, low: VideoClip) -> Result<Self> {
        if gt.len() != low.len() || gt.height() != low.height() || gt.width() != low.width() {
            return Err(Error::shape(
                "clip pair",
                format!(
                    "{} frames {}x{} vs {} frames {}x{}",
                    gt.len(),
                    gt.height(),
                    gt.width(),
                    low.len(),
                    low.height(),
                    low.width()
                ),
            ));
        }
        Ok(Self { gt, low })
    }
}

/// How the dark half of a synthetic pair is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DarkeningMode {
    /// Parameters drawn from the training ranges.
    Sampled,
    /// The fixed evaluation preset.
    TestPreset,
}

/// Render a random scene from `seed` and darken it.
pub fn synth_pair(
    height: usize,
    width: usize,
    frames: usize,
    seed: u64,
    mode: DarkeningMode,
) -> Result<(SceneSpec, DegradationParams, ClipPair)> {
    let (spec, gt) = render_random_clip(height, width, frames, seed)?;
    let dark_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03;
    let params = match mode {
        DarkeningMode::Sampled => sample_degradation_params(dark_seed),
        DarkeningMode::TestPreset => DegradationParams::test_preset(dark_seed),
    };
    let low = degrade_clip(&gt, &params)?;
    Ok((spec, params, ClipPair { gt, low }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_scene(velocity: (f64, f64)) -> SceneSpec {
        SceneSpec {
            height: 24,
            width: 40,
            frames: 5,
            shapes: vec![SceneShape {
                kind: ShapeKind::Disk { radius: 4.0 },
                color: [1.0; 3],
                position: (10.3, 12.0),
                velocity,
            }],
            background: Background::Constant([0.5; 3]),
            brightness: 1.0,
        }
    }

    #[test]
    fn moving_disk_changes_a_narrow_band() {
        let clip = render_clip(&disk_scene((2.0, 0.0)), 1).unwrap();
        let diameter = 8.0;
        for pair in clip.frames().windows(2) {
            let mut cols = Vec::new();
            for y in 0..24 {
                for x in 0..40 {
                    if (0..3).any(|c| pair[0].get(y, x, c) != pair[1].get(y, x, c)) {
                        cols.push(x);
                    }
                }
            }
            let band = (cols.iter().max().unwrap() - cols.iter().min().unwrap()) as f64;
            assert!(band <= diameter + 2.0, "band {band}");
        }
    }

    #[test]
    fn static_scene_repeats_frames() {
        let clip = render_clip(&disk_scene((0.0, 0.0)), 1).unwrap();
        assert!(clip.frames().windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_random_clip(32, 32, 5, 9).unwrap();
        let b = render_random_clip(32, 32, 5, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.1.mean_brightness() >= MIN_MEAN_BRIGHTNESS);
    }

    #[test]
    fn degenerate_scene_is_rejected() {
        let mut s = disk_scene((1.0, 0.0));
        s.shapes.clear();
        assert!(render_clip(&s, 0).is_err());
    }

    #[test]
    fn dark_scene_is_rejected() {
        let mut s = disk_scene((1.0, 0.0));
        s.background = Background::Constant([0.05; 3]);
        assert!(render_clip(&s, 0).is_err());
    }

    #[test]
    fn test_preset_on_white() {
        // 0.8 * 0.95^2.75 = 0.694806...
        let p = DegradationParams::test_preset(0);
        assert!((p.darken(1.0) - 0.6948).abs() < 1e-4);
        assert_eq!((p.gamma, p.alpha, p.beta, p.sigma), (2.75, 0.95, 0.8, 0.01));
    }

    #[test]
    fn degrade_zero_and_identity() {
        let clip = render_clip(&disk_scene((1.0, 0.0)), 3).unwrap();
        let id = degrade_clip(&clip, &DegradationParams::identity()).unwrap();
        assert_eq!(id, clip);
        let black = VideoClip::from_frames(vec![Image::new(2, 2, 0.0); 2]).unwrap();
        let p = DegradationParams {
            sigma: 0.0,
            ..sample_degradation_params(4)
        };
        assert!(degrade_clip(&black, &p)
            .unwrap()
            .frames()
            .iter()
            .all(|f| f.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn noisy_degradation_is_seeded() {
        let clip = render_clip(&disk_scene((1.0, 0.0)), 3).unwrap();
        let p = DegradationParams::test_preset(42);
        assert_eq!(degrade_clip(&clip, &p).unwrap(), degrade_clip(&clip, &p).unwrap());
        let q = DegradationParams::test_preset(43);
        assert_ne!(degrade_clip(&clip, &p).unwrap(), degrade_clip(&clip, &q).unwrap());
    }

    #[test]
    fn non_positive_gamma_is_rejected() {
        let clip = render_clip(&disk_scene((1.0, 0.0)), 3).unwrap();
        let p = DegradationParams {
            gamma: 0.0,
            ..DegradationParams::identity()
        };
        assert!(degrade_clip(&clip, &p).is_err());
    }

    #[test]
    fn sampled_parameters_cover_training_ranges() {
        let n = 10_000;
        let samples: Vec<_> = (0..n).map(sample_degradation_params).collect();
        let gammas: Vec<f64> = samples.iter().map(|p| p.gamma).collect();
        let min = gammas.iter().copied().fold(f64::INFINITY, f64::min);
        let max = gammas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = gammas.iter().sum::<f64>() / n as f64;
        assert!(min >= 2.0 && max <= 3.5);
        assert!((mean - 2.75).abs() < 0.05, "{mean}");
        for p in &samples {
            assert!((0.9..=1.0).contains(&p.alpha));
            assert!((0.5..=1.0).contains(&p.beta));
            assert!((0.0..=0.02).contains(&p.sigma));
        }
        assert_eq!(sample_degradation_params(5), sample_degradation_params(5));
    }

    #[test]
    fn synthetic_pairs_are_seeded_and_darker() {
        let (_, params, a) = synth_pair(16, 16, 3, 11, DarkeningMode::TestPreset).unwrap();
        let (_, _, b) = synth_pair(16, 16, 3, 11, DarkeningMode::TestPreset).unwrap();
        assert_eq!(a, b);
        assert_eq!((params.gamma, params.alpha, params.beta), (2.75, 0.95, 0.8));
        assert!(a.low.mean_brightness() < a.gt.mean_brightness());
        let (_, _, c) = synth_pair(16, 16, 3, 12, DarkeningMode::Sampled).unwrap();
        assert_ne!(a.gt, c.gt);
        assert!(ClipPair::new(a.gt.clone(), c.low.window(0, 2).unwrap()).is_err());
    }
}
