//! Frame-level PSNR and SSIM.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if !a.same_size(b) {
        return Err(Error::shape(
            "metric",
            format!("{}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width()),
        ));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.data().len() as f64;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// `10 log10(1 / MSE)` for unit dynamic range, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM of the channel-mean grayscale images, using an 11x11 Gaussian
/// window (sigma 1.5) over every fully contained position.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::pre(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let (x, y) = (a.luma(), b.luma());
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(&x, h, w, &taps);
    let my = filter_valid(&y, h, w, &taps);
    let sxx = filter_valid(&xx, h, w, &taps);
    let syy = filter_valid(&yy, h, w, &taps);
    let sxy = filter_valid(&xy, h, w, &taps);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let n = mx.len() as f64;
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n)
}

/// Per-frame scores of a predicted clip against ground truth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub names: Vec<String>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, pred: &Image, gt: &Image) -> Result<()> {
        self.psnr.push(psnr(pred, gt)?);
        self.ssim.push(ssim(pred, gt)?);
        self.names.push(name.into());
        Ok(())
    }

    pub fn mean_psnr(&self) -> f64 {
        self.psnr.iter().sum::<f64>() / self.psnr.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.ssim.iter().sum::<f64>() / self.ssim.len().max(1) as f64
    }

    /// `frame,psnr,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,psnr,ssim\n");
        for ((n, p), q) in self.names.iter().zip(&self.psnr).zip(&self.ssim) {
            let _ = writeln!(s, "{n},{p:.6},{q:.6}");
        }
        let _ = writeln!(s, "mean,{:.6},{:.6}", self.mean_psnr(), self.mean_ssim());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_analytic_cases() {
        let a = Image::new(4, 4, 0.0);
        let b = Image::new(4, 4, 1.0);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert_eq!(psnr(&a, &b).unwrap(), 0.0);
        let c = Image::new(4, 4, 0.1);
        assert!((psnr(&a, &c).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Image::new(4, 5, 0.0)).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let img = Image::from_fn(16, 20, |y, x, c| ((y * 7 + x * 3 + c) % 11) as f64 / 10.0);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
        let k = Image::new(12, 12, 0.5);
        assert!((ssim(&k, &k).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&Image::new(10, 12, 0.0), &Image::new(10, 12, 0.0)).is_err());
    }

    #[test]
    fn report_csv_has_mean_row() {
        let mut r = MetricReport::default();
        let a = Image::new(12, 12, 0.2);
        r.push("f0", &a, &a).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("frame,psnr,ssim\nf0,100.000000,1.000000\n"));
        assert!(csv.ends_with("mean,100.000000,1.000000\n"));
    }
}
