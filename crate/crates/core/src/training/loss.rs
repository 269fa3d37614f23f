//! Stage losses: mask BCE plus voxel L1, and image L1 plus a feature-space L1.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eventsim::{gt_voxel_mask, GT_MASK_THRESHOLD};
use crate::numgrid::{Graph, Real, Tensor, Var};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// Default seed of the random feature extractor.
pub const FEATURE_SEED: u64 = 0x5eed_fea7;

/// Scalar handles of a composite loss: `total = first + lambda * second`.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub first: Var,
    pub second: Var,
}

/// Evaluated loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub first: f64,
    pub second: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn read<T: Real>(g: &Graph<T>, v: &LossVars) -> Self {
        Self {
            first: g.value(v.first).item().as_f64(),
            second: g.value(v.second).item().as_f64(),
            total: g.value(v.total).item().as_f64(),
        }
    }
}

/// `L_m + lambda1 * L_v`: mean BCE of `prob` against the thresholded target
/// grid, plus mean `|restored - target|`.
pub fn stage1_loss<T: Real>(
    g: &mut Graph<T>,
    prob: Var,
    restored: Var,
    target: &Tensor<T>,
    lambda1: f64,
) -> Result<LossVars> {
    if g.shape(restored) != target.shape() {
        return Err(Error::shape(
            "stage1 loss",
            format!("{:?} vs target {:?}", g.shape(restored), target.shape()),
        ));
    }
    let mask = gt_voxel_mask(target, GT_MASK_THRESHOLD);
    let first = g.bce_mean(prob, &mask, BCE_CLAMP)?;
    let t = g.constant(target.clone());
    let diff = g.sub(restored, t)?;
    let second = g.mean_abs(diff);
    let weighted = g.scale(second, T::c(lambda1));
    let total = g.add(first, weighted)?;
    Ok(LossVars { total, first, second })
}

/// Eager stage-1 loss on `P`, `Er` and `G`, all `B x H x W`.
pub fn loss_stage1<T: Real>(
    prob: &Tensor<T>,
    restored: &Tensor<T>,
    target: &Tensor<T>,
    lambda1: f64,
) -> Result<LossTerms> {
    if prob.shape() != target.shape() {
        return Err(Error::shape(
            "stage1 loss",
            format!("{:?} vs target {:?}", prob.shape(), target.shape()),
        ));
    }
    let mut g = Graph::new();
    let p = g.constant(prob.clone());
    let r = g.constant(restored.clone());
    let v = stage1_loss(&mut g, p, r, target, lambda1)?;
    Ok(LossTerms::read(&g, &v))
}

/// Maps an image batch `[N, 3, H, W]` to a list of feature maps.
pub trait FeatureExtractor<T: Real> {
    fn features(&self, g: &mut Graph<T>, image: Var) -> Result<Vec<Var>>;
}

/// Three fixed 3x3 conv + ReLU stages (3 -> 8 -> 16 -> 32 channels, the last
/// two with stride 2), He-initialised from a seed and never trained.
#[derive(Clone, Debug)]
pub struct RandomConvFeatures<T> {
    stages: Vec<(Tensor<T>, usize)>,
}

impl<T: Real> RandomConvFeatures<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = [(3, 8, 1), (8, 16, 2), (16, 32, 2)];
        let stages = plan
            .iter()
            .map(|&(ci, co, stride)| {
                let std = (2.0 / (ci * 9) as f64).sqrt();
                (Tensor::randn(&[co, ci, 3, 3], std, &mut rng), stride)
            })
            .collect();
        Self { stages }
    }
}

impl<T: Real> Default for RandomConvFeatures<T> {
    fn default() -> Self {
        Self::new(FEATURE_SEED)
    }
}

impl<T: Real> FeatureExtractor<T> for RandomConvFeatures<T> {
    fn features(&self, g: &mut Graph<T>, image: Var) -> Result<Vec<Var>> {
        let mut x = image;
        let mut out = Vec::with_capacity(self.stages.len());
        for (w, stride) in &self.stages {
            let w = g.constant(w.clone());
            let y = g.conv2d(x, w, None, *stride, 1)?;
            x = g.relu(y);
            out.push(x);
        }
        Ok(out)
    }
}

/// `mean|pred - gt| + lambda2 * L_feat`, where `L_feat` averages the mean L1
/// distance of each extracted feature map. The feature term is skipped (and
/// reported as zero) when `lambda2` is zero.
pub fn stage2_loss<T: Real>(
    g: &mut Graph<T>,
    pred: Var,
    gt: &Tensor<T>,
    lambda2: f64,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<LossVars> {
    if g.shape(pred) != gt.shape() {
        return Err(Error::shape(
            "stage2 loss",
            format!("{:?} vs target {:?}", g.shape(pred), gt.shape()),
        ));
    }
    let t = g.constant(gt.clone());
    let diff = g.sub(pred, t)?;
    let first = g.mean_abs(diff);
    if lambda2 == 0.0 {
        let second = g.constant(Tensor::scalar(T::zero()));
        return Ok(LossVars {
            total: first,
            first,
            second,
        });
    }
    let fp = extractor.features(g, pred)?;
    let ft = extractor.features(g, t)?;
    let mut second: Option<Var> = None;
    for (a, b) in fp.iter().zip(&ft) {
        let d = g.sub(*a, *b)?;
        let m = g.mean_abs(d);
        second = Some(match second {
            Some(s) => g.add(s, m)?,
            None => m,
        });
    }
    let second = second.ok_or_else(|| Error::pre("feature extractor returned no maps"))?;
    let second = g.scale(second, T::c(1.0 / fp.len() as f64));
    let weighted = g.scale(second, T::c(lambda2));
    let total = g.add(first, weighted)?;
    Ok(LossVars { total, first, second })
}

/// Eager stage-2 loss on images `[3, H, W]` or batches `[N, 3, H, W]`.
pub fn loss_stage2<T: Real>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    lambda2: f64,
    extractor: &dyn FeatureExtractor<T>,
) -> Result<LossTerms> {
    let batched = |t: &Tensor<T>| -> Result<Tensor<T>> {
        match t.shape() {
            [3, h, w] => t.clone().reshape(&[1, 3, *h, *w]),
            [_, 3, _, _] => Ok(t.clone()),
            s => Err(Error::shape("stage2 loss", format!("expected an RGB image, got {s:?}"))),
        }
    };
    let (p, q) = (batched(pred)?, batched(gt)?);
    let mut g = Graph::new();
    let pv = g.constant(p);
    let v = stage2_loss(&mut g, pv, &q, lambda2, extractor)?;
    Ok(LossTerms::read(&g, &v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_t(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::uniform(shape, lo, hi, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn bce_at_half_is_ln2() {
        let p = Tensor::full(&[6, 3, 3], 0.5);
        let g = rand_t(&[6, 3, 3], 1, 0.0, 0.3);
        let l = loss_stage1(&p, &g, &g, 1.0).unwrap();
        assert!((l.first - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(l.second, 0.0);
        assert_eq!(l.total, l.first);
    }

    #[test]
    fn stage1_matches_scalar_loop() {
        let shape = [12, 4, 5];
        let p = rand_t(&shape, 2, 0.0, 1.0);
        let er = rand_t(&shape, 3, 0.0, 0.5);
        let gt = rand_t(&shape, 4, 0.0, 0.3);
        let lambda = 0.7;
        let n = p.len() as f64;
        let mut bce = 0.0;
        let mut l1 = 0.0;
        for i in 0..p.len() {
            let m = if gt.data()[i] >= 0.1 { 1.0 } else { 0.0 };
            let q = p.data()[i].clamp(1e-7, 1.0 - 1e-7);
            bce -= m * q.ln() + (1.0 - m) * (1.0 - q).ln();
            l1 += (er.data()[i] - gt.data()[i]).abs();
        }
        let want = bce / n + lambda * l1 / n;
        let got = loss_stage1(&p, &er, &gt, lambda).unwrap();
        assert!((got.total - want).abs() < 1e-6, "{} vs {want}", got.total);
    }

    #[test]
    fn saturated_probabilities_stay_finite() {
        let p = Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        let g = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let l = loss_stage1(&p, &g, &g, 1.0).unwrap();
        assert!(l.total.is_finite());
        assert!((l.first + (1e-7f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn stage2_analytic_cases() {
        let ex = RandomConvFeatures::<f64>::default();
        let a = rand_t(&[3, 9, 9], 5, 0.0, 1.0);
        let same = loss_stage2(&a, &a, 0.1, &ex).unwrap();
        assert_eq!(same.total, 0.0);
        let zeros = Tensor::zeros(&[3, 8, 8]);
        let ones = Tensor::full(&[3, 8, 8], 1.0);
        let l = loss_stage2(&zeros, &ones, 0.0, &ex).unwrap();
        assert_eq!((l.first, l.total), (1.0, 1.0));
        let b = a.map(|v| v * 0.5);
        let plain = loss_stage2(&b, &a, 0.0, &ex).unwrap();
        let full = loss_stage2(&b, &a, 0.1, &ex).unwrap();
        assert_eq!(plain.first, full.first);
        assert!(full.second > 0.0 && full.total > plain.total);
    }

    #[test]
    fn losses_are_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ex = RandomConvFeatures::<f64>::default();
        for s in 0..10 {
            let p = rand_t(&[6, 2, 2], s, 0.0, 1.0);
            let gt = rand_t(&[6, 2, 2], s + 100, 0.0, 0.2);
            assert!(loss_stage1(&p, &p, &gt, rng.gen()).unwrap().total >= 0.0);
            let x = rand_t(&[3, 6, 6], s, 0.0, 1.0);
            let y = rand_t(&[3, 6, 6], s + 7, 0.0, 1.0);
            assert!(loss_stage2(&x, &y, rng.gen(), &ex).unwrap().total >= 0.0);
        }
    }
}
