use crate::error::{Error, Result};
use crate::numgrid::{Real, Tensor};

/// RGB image with values nominally in `[0, 1]`, stored row-major as HxWx3.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, fill: f64) -> Self {
        Self {
            height,
            width,
            data: vec![fill; height * width * 3],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::shape(
                "image",
                format!("{height}x{width}x3 from {} values", data.len()),
            ));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Channel-mean grayscale plane, row-major.
    pub fn luma(&self) -> Vec<f64> {
        self.data.chunks(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect()
    }

    /// `[3, H, W]` tensor.
    pub fn to_chw<T: Real>(&self) -> Tensor<T> {
        let plane = self.height * self.width;
        let mut out = vec![T::zero(); 3 * plane];
        for (i, px) in self.data.chunks(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = T::c(px[c]);
            }
        }
        Tensor::from_vec(&[3, self.height, self.width], out).expect("image tensor")
    }

    /// Inverse of [`Image::to_chw`]; accepts `[3, H, W]` or `[1, 3, H, W]`.
    pub fn from_chw<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        let (h, w) = match s {
            [3, h, w] | [1, 3, h, w] => (*h, *w),
            _ => return Err(Error::shape("image", format!("expected [3, H, W], got {s:?}"))),
        };
        let plane = h * w;
        let d = t.data();
        let mut data = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                data.push(d[c * plane + i].as_f64());
            }
        }
        Self::from_vec(h, w, data)
    }
}

/// Ordered frames with timestamps (in frame-interval units).
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    frames: Vec<Image>,
    timestamps: Vec<f64>,
}

impl VideoClip {
    pub fn new(frames: Vec<Image>, timestamps: Vec<f64>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::pre("a clip needs at least one frame"))?;
        if frames.len() != timestamps.len() {
            return Err(Error::shape(
                "clip",
                format!("{} frames but {} timestamps", frames.len(), timestamps.len()),
            ));
        }
        if let Some(f) = frames.iter().find(|f| !f.same_size(first)) {
            return Err(Error::shape(
                "clip",
                format!(
                    "frame {}x{} differs from {}x{}",
                    f.height, f.width, first.height, first.width
                ),
            ));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::pre("clip timestamps must increase strictly"));
        }
        Ok(Self { frames, timestamps })
    }

    /// Frames at timestamps `0, 1, 2, ...`.
    pub fn from_frames(frames: Vec<Image>) -> Result<Self> {
        let ts = (0..frames.len()).map(|i| i as f64).collect();
        Self::new(frames, ts)
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn mean_brightness(&self) -> f64 {
        self.frames.iter().map(Image::mean).sum::<f64>() / self.frames.len() as f64
    }

    /// Frames `start..start+len` with edge frames repeated where the window
    /// runs past either end. Timestamps are re-based to `0, 1, ...`.
    pub fn window(&self, center: usize, len: usize) -> Result<Self> {
        if len == 0 || center >= self.frames.len() {
            return Err(Error::pre(format!(
                "window of {len} around frame {center} in a {}-frame clip",
                self.frames.len()
            )));
        }
        let half = (len / 2) as isize;
        let last = self.frames.len() as isize - 1;
        let frames = (0..len as isize)
            .map(|i| {
                let j = (center as isize + i - half).clamp(0, last) as usize;
                self.frames[j].clone()
            })
            .collect();
        Self::from_frames(frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chw_round_trip() {
        let img = Image::from_fn(2, 3, |y, x, c| (y * 10 + x) as f64 / 100.0 + c as f64 * 0.001);
        let t: Tensor<f64> = img.to_chw();
        assert_eq!(t.shape(), &[3, 2, 3]);
        assert_eq!(Image::from_chw(&t).unwrap(), img);
    }

    #[test]
    fn window_repeats_edges() {
        let frames: Vec<_> = (0..3).map(|i| Image::new(1, 1, i as f64)).collect();
        let clip = VideoClip::from_frames(frames).unwrap();
        let w = clip.window(0, 5).unwrap();
        let vals: Vec<f64> = w.frames().iter().map(|f| f.get(0, 0, 0)).collect();
        assert_eq!(vals, vec![0.0, 0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn rejects_mixed_sizes() {
        let r = VideoClip::from_frames(vec![Image::new(2, 2, 0.0), Image::new(2, 3, 0.0)]);
        assert!(r.is_err());
    }
}
