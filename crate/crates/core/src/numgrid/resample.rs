//! Interpolation matrices for [`Graph::resample`](super::Graph::resample).
//!
//! Each builder returns an `out x in` matrix acting on one spatial axis.

use std::rc::Rc;

use super::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// Adaptive average pooling: output cell `i` averages inputs
/// `floor(i*n/m) .. ceil((i+1)*n/m)`.
pub fn adaptive_avg_matrix<T: Real>(input: usize, output: usize) -> Tensor<T> {
    let mut m = vec![T::zero(); output * input];
    for i in 0..output {
        let start = i * input / output;
        let end = ((i + 1) * input).div_ceil(output);
        let w = T::c(1.0 / (end - start) as f64);
        for j in start..end {
            m[i * input + j] = w;
        }
    }
    Tensor::from_vec(&[output, input], m).expect("pool matrix")
}

/// Half-pixel-centred linear interpolation (edges clamped).
pub fn bilinear_matrix<T: Real>(input: usize, output: usize) -> Tensor<T> {
    let mut m = vec![T::zero(); output * input];
    let scale = input as f64 / output as f64;
    for i in 0..output {
        let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(input - 1);
        let i1 = (i0 + 1).min(input - 1);
        let frac = src - i0 as f64;
        m[i * input + i0] += T::c(1.0 - frac);
        m[i * input + i1] += T::c(frac);
    }
    Tensor::from_vec(&[output, input], m).expect("bilinear matrix")
}

pub fn nearest_matrix<T: Real>(input: usize, output: usize) -> Tensor<T> {
    let mut m = vec![T::zero(); output * input];
    for i in 0..output {
        let j = (i * input / output).min(input - 1);
        m[i * input + j] = T::one();
    }
    Tensor::from_vec(&[output, input], m).expect("nearest matrix")
}

fn spatial(g: &Graph<impl Real>, x: Var) -> Result<(usize, usize)> {
    let s = g.shape(x);
    if s.len() < 2 {
        return Err(Error::shape("resample", format!("{s:?} has no spatial axes")));
    }
    Ok((s[s.len() - 2], s[s.len() - 1]))
}

impl<T: Real> Graph<T> {
    pub fn adaptive_avg_pool(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (h, w) = spatial(self, x)?;
        self.resample(
            x,
            Rc::new(adaptive_avg_matrix(h, out_h)),
            Rc::new(adaptive_avg_matrix(w, out_w)),
        )
    }

    pub fn upsample_bilinear(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (h, w) = spatial(self, x)?;
        self.resample(
            x,
            Rc::new(bilinear_matrix(h, out_h)),
            Rc::new(bilinear_matrix(w, out_w)),
        )
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (h, w) = spatial(self, x)?;
        self.resample(
            x,
            Rc::new(nearest_matrix(h, h * factor)),
            Rc::new(nearest_matrix(w, w * factor)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn is_identity(m: &Tensor<f64>) -> bool {
        let n = m.shape()[0];
        (0..n).all(|i| (0..n).all(|j| m.data()[i * n + j] == if i == j { 1.0 } else { 0.0 }))
    }

    #[test]
    fn same_size_matrices_are_identity() {
        for n in [1, 5, 32] {
            assert!(is_identity(&adaptive_avg_matrix(n, n)));
            assert!(is_identity(&bilinear_matrix(n, n)));
            assert!(is_identity(&nearest_matrix(n, n)));
        }
    }

    #[test]
    fn rows_sum_to_one() {
        for (i, o) in [(64, 32), (8, 32), (7, 3), (32, 64)] {
            for m in [
                adaptive_avg_matrix::<f64>(i, o),
                bilinear_matrix(i, o),
                nearest_matrix(i, o),
            ] {
                for row in m.data().chunks(i) {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pool_halves_by_pair_averages() {
        let m = adaptive_avg_matrix::<f64>(4, 2);
        assert_eq!(m.data(), &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5]);
    }
}
