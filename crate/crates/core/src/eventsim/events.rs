use crate::error::{Error, Result};
use crate::image::{Image, VideoClip};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_sign(p: i8) -> Option<Self> {
        match p {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    /// Group index in the voxel layout: 0 positive, 1 negative.
    pub fn group(self) -> usize {
        match self {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
        }
    }
}

/// One colour event. `channel` is 0, 1, 2 for r, g, b.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: f32,
    pub channel: u8,
    pub polarity: Polarity,
}

pub type EventStream = Vec<Event>;

/// Linear blend up-sampling: `(N-1)*factor + 1` frames, originals kept at
/// every `factor`-th position.
pub fn interpolate_frames(clip: &VideoClip, factor: usize) -> Result<VideoClip> {
    if factor == 0 {
        return Err(Error::pre("interpolation factor must be at least 1"));
    }
    if clip.len() < 2 {
        return Err(Error::pre("interpolation needs at least 2 frames"));
    }
    if factor == 1 {
        return Ok(clip.clone());
    }
    let frames = clip.frames();
    let ts = clip.timestamps();
    let mut out = Vec::with_capacity((frames.len() - 1) * factor + 1);
    let mut out_ts = Vec::with_capacity(out.capacity());
    for j in 0..frames.len() - 1 {
        let (a, b) = (&frames[j], &frames[j + 1]);
        out.push(a.clone());
        out_ts.push(ts[j]);
        for s in 1..factor {
            let w = s as f64 / factor as f64;
            let data = a.data().iter().zip(b.data()).map(|(&p, &q)| p + w * (q - p)).collect();
            out.push(Image::from_vec(a.height(), a.width(), data)?);
            out_ts.push(ts[j] + w * (ts[j + 1] - ts[j]));
        }
    }
    out.push(frames[frames.len() - 1].clone());
    out_ts.push(ts[ts.len() - 1]);
    VideoClip::new(out, out_ts)
}

/// Differences of consecutive frames on the 0-255 scale; an event fires where
/// the magnitude reaches `threshold`, stamped with the later frame's time.
///
/// Events come out ordered by `(t, y, x, channel)`.
pub fn generate_events(clip: &VideoClip, threshold: f64) -> Result<EventStream> {
    if !(threshold > 0.0) {
        return Err(Error::pre(format!("event threshold must be positive, got {threshold}")));
    }
    if clip.len() < 2 {
        return Err(Error::pre("event generation needs at least 2 frames"));
    }
    if clip.height() > u16::MAX as usize + 1 || clip.width() > u16::MAX as usize + 1 {
        return Err(Error::pre("frame too large for 16-bit event coordinates"));
    }
    // absorbs round-off so that k/255 steps of quantized frames compare exactly
    let cut = threshold - 1e-9;
    let mut events = Vec::new();
    let frames = clip.frames();
    for (j, pair) in frames.windows(2).enumerate() {
        let t = clip.timestamps()[j + 1] as f32;
        let (prev, next) = (&pair[0], &pair[1]);
        for y in 0..prev.height() {
            for x in 0..prev.width() {
                for c in 0..3 {
                    let d = 255.0 * (next.get(y, x, c) - prev.get(y, x, c));
                    if d.abs() >= cut {
                        events.push(Event {
                            x: x as u16,
                            y: y as u16,
                            t,
                            channel: c as u8,
                            polarity: if d > 0.0 {
                                Polarity::Positive
                            } else {
                                Polarity::Negative
                            },
                        });
                    }
                }
            }
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_frames(a: f64, b: f64) -> VideoClip {
        VideoClip::from_frames(vec![Image::new(1, 1, a), Image::new(1, 1, b)]).unwrap()
    }

    #[test]
    fn unit_factor_is_identity() {
        let clip = two_frames(0.2, 0.4);
        assert_eq!(interpolate_frames(&clip, 1).unwrap(), clip);
        assert!(interpolate_frames(&clip, 0).is_err());
    }

    #[test]
    fn midpoint_of_black_and_white() {
        let up = interpolate_frames(&two_frames(0.0, 1.0), 2).unwrap();
        assert_eq!(up.len(), 3);
        assert!(up.frames()[1].data().iter().all(|&v| v == 0.5));
        assert_eq!(up.timestamps(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn factor_four_on_five_frames() {
        let frames: Vec<_> = (0..5).map(|i| Image::new(2, 2, i as f64 / 7.0)).collect();
        let clip = VideoClip::from_frames(frames).unwrap();
        let up = interpolate_frames(&clip, 4).unwrap();
        assert_eq!(up.len(), 17);
        for j in 0..5 {
            assert_eq!(up.frames()[4 * j], clip.frames()[j]);
        }
    }

    #[test]
    fn three_level_rise_fires_positive_event() {
        let ev = generate_events(&two_frames(100.0 / 255.0, 103.0 / 255.0), 2.0).unwrap();
        assert_eq!(ev.len(), 3);
        assert!(ev.iter().all(|e| e.polarity == Polarity::Positive && e.t == 1.0));
    }

    #[test]
    fn exact_threshold_step_fires() {
        let ev = generate_events(&two_frames(100.0 / 255.0, 98.0 / 255.0), 2.0).unwrap();
        assert_eq!(ev.len(), 3);
        assert!(ev.iter().all(|e| e.polarity == Polarity::Negative));
    }

    #[test]
    fn one_level_drop_is_silent() {
        assert!(generate_events(&two_frames(100.0 / 255.0, 99.0 / 255.0), 2.0)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn static_clip_has_no_events() {
        let clip = VideoClip::from_frames(vec![Image::new(3, 3, 0.4); 4]).unwrap();
        assert!(generate_events(&clip, 0.5).unwrap().is_empty());
    }

    #[test]
    fn single_frame_is_rejected() {
        let clip = VideoClip::from_frames(vec![Image::new(1, 1, 0.0)]).unwrap();
        assert!(generate_events(&clip, 2.0).is_err());
    }
}
