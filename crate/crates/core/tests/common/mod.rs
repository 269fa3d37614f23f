//! Loop-based reference implementations shared by the integration tests.
#![allow(dead_code)]

use evlight::netcore::layers::Conv;
use evlight::netcore::EiftBlock;
use evlight::numgrid::{ParamTree, Tensor};
use rand::Rng;

/// Single-sample "same" convolution of `x: [Ci, H, W]` through the named
/// conv parameters, one output element at a time.
pub fn conv(p: &ParamTree<f64>, layer: &Conv, x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let wt = p.get(&format!("{}.weight", layer.name)).unwrap().data();
    let b = p.get(&format!("{}.bias", layer.name)).unwrap().data();
    let (ci, co, k) = (layer.cin, layer.cout, layer.kernel);
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; co * h * w];
    for o in 0..co {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = b[o];
                for c in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = y as isize + ky as isize - pad;
                            let ix = xx as isize + kx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += wt[((o * ci + c) * k + ky) * k + kx] * x[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

pub fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|a| a.max(0.0)).collect()
}

/// CCT on one sample: returns `(X [C*H*W], map [C*C])`.
pub fn cct(
    p: &ParamTree<f64>,
    b: &EiftBlock,
    main: &[f64],
    modulation: &[f64],
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let e = relu(conv(p, &b.f2, modulation, h, w));
    let q = conv(p, &b.f3, &e, h, w); // Q[s][j] = q[j*hw + s]
    let k = conv(p, &b.f4, &e, h, w); // K[i][s] = k[i*hw + s]
    let mut map = vec![0.0; c * c];
    for i in 0..c {
        let logits: Vec<f64> = (0..c)
            .map(|j| (0..hw).map(|s| k[i * hw + s] * q[j * hw + s]).sum())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        for j in 0..c {
            map[i * c + j] = (logits[j] - m).exp() / z;
        }
    }
    let f1 = conv(p, &b.f1, main, h, w);
    let mut x = vec![0.0; c * hw];
    for ch in 0..c {
        for s in 0..hw {
            x[ch * hw + s] = (0..c).map(|cp| f1[cp * hw + s] * map[cp * c + ch]).sum();
        }
    }
    (x, map)
}

/// EWP on one sample: `sigmoid(f5(x)) * f6(relu(f2(modulation)))`.
pub fn ewp(p: &ParamTree<f64>, b: &EiftBlock, x: &[f64], modulation: &[f64], h: usize, w: usize) -> Vec<f64> {
    let e = relu(conv(p, &b.f2, modulation, h, w));
    let a = conv(p, &b.f5, x, h, w);
    let v = conv(p, &b.f6, &e, h, w);
    a.iter().zip(&v).map(|(a, v)| v / (1.0 + (-a).exp())).collect()
}

/// Parameters for `block` drawn from N(0, std).
pub fn block_params<R: Rng>(block: &EiftBlock, std: f64, rng: &mut R) -> ParamTree<f64> {
    let mut specs = Vec::new();
    block.specs(&mut specs);
    let mut p = ParamTree::new();
    for s in specs {
        p.insert(s.name, Tensor::randn(&s.shape, std, rng)).unwrap();
    }
    p
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// SSIM evaluated window by window with an explicit 2-D Gaussian.
#[allow(clippy::needless_range_loop)]
pub fn direct_ssim(a: &evlight::image::Image, b: &evlight::image::Image) -> f64 {
    let (h, w) = (a.height(), a.width());
    let gray = |img: &evlight::image::Image, y: usize, x: usize| (0..3).map(|c| img.get(y, x, c)).sum::<f64>() / 3.0;
    let mut k = [[0.0f64; 11]; 11];
    let mut z = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
            z += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let wt = k[i][j] / z;
                    let (p, q) = (gray(a, y0 + i, x0 + j), gray(b, y0 + i, x0 + j));
                    mx += wt * p;
                    my += wt * q;
                    sxx += wt * p * p;
                    syy += wt * q * q;
                    sxy += wt * p * q;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}
