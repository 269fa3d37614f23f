mod common;

use evlight::image::Image;
use evlight::metrics::{psnr, ssim};
use evlight::numgrid::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn ssim_matches_direct_window_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (h, w) in [(11, 11), (14, 17), (20, 12)] {
        let a = Image::from_vec(
            h,
            w,
            Tensor::<f64>::uniform(&[h * w * 3], 0.0, 1.0, &mut rng).into_data(),
        )
        .unwrap();
        let b = Image::from_fn(h, w, |y, x, c| {
            (a.get(y, x, c) * 0.7 + 0.1 * ((y + x) % 3) as f64).min(1.0)
        });
        let got = ssim(&a, &b).unwrap();
        let want = common::direct_ssim(&a, &b);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn psnr_known_mse() {
    let a = Image::new(5, 5, 0.5);
    let b = Image::from_fn(5, 5, |y, _, _| if y % 2 == 0 { 0.6 } else { 0.4 });
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
}
