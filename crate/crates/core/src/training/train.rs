use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::netcore::{gate, Model, RestorationNet};
use crate::numgrid::{adam_step, AdamConfig, AdamState, Graph, ParamTree, Real, Tensor};

use super::data::{crop_chw, Stage1Sample, Stage2Sample};
use super::loss::{stage1_loss, stage2_loss, FeatureExtractor, LossTerms, RandomConvFeatures};
use super::TrainConfig;

/// Loss terms of one optimiser step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub terms: LossTerms,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: ParamTree<T>,
    pub history: Vec<LossRecord>,
}

/// `iteration,<first>,<second>,total` rows; stage 1 names the terms
/// `l_m,l_v`, stage 2 `l1,l_feat`.
pub fn loss_history_csv(stage: u8, history: &[LossRecord]) -> String {
    let (a, b) = if stage == 1 { ("l_m", "l_v") } else { ("l1", "l_feat") };
    let mut s = format!("iteration,{a},{b},total\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.iteration, r.terms.first, r.terms.second, r.terms.total
        );
    }
    s
}

/// Mean total loss over `history[range]`.
pub fn mean_total(history: &[LossRecord], range: std::ops::Range<usize>) -> f64 {
    let s = &history[range];
    s.iter().map(|r| r.terms.total).sum::<f64>() / s.len().max(1) as f64
}

/// Seeded choice of `(sample, y, x)` per batch slot.
struct Batcher {
    rng: ChaCha8Rng,
    samples: usize,
    batch: usize,
    crop: usize,
}

impl Batcher {
    fn new(seed: u64, samples: usize, cfg: &TrainConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x0BA7_C4E5),
            samples,
            batch: cfg.batch,
            crop: cfg.crop,
        }
    }

    fn draw(&mut self, h: usize, w: usize) -> Vec<(usize, usize, usize)> {
        (0..self.batch)
            .map(|_| {
                let i = self.rng.gen_range(0..self.samples);
                let y = self.rng.gen_range(0..=h - self.crop);
                let x = self.rng.gen_range(0..=w - self.crop);
                (i, y, x)
            })
            .collect()
    }
}

fn batch_of<T: Real>(
    picks: &[(usize, usize, usize)],
    crop: usize,
    get: impl Fn(usize) -> Vec<Tensor<T>>,
) -> Result<Vec<Tensor<T>>> {
    let mut columns: Vec<Vec<Tensor<T>>> = Vec::new();
    for &(i, y, x) in picks {
        for (k, t) in get(i).iter().enumerate() {
            if columns.len() <= k {
                columns.push(Vec::new());
            }
            columns[k].push(crop_chw(t, y, x, crop)?);
        }
    }
    columns.iter().map(|c| Tensor::stack(c)).collect()
}

fn spatial<T: Real>(t: &Tensor<T>) -> (usize, usize) {
    let s = t.shape();
    (s[s.len() - 2], s[s.len() - 1])
}

/// Train the restoration network on `(E, G)` samples; returns its parameters.
pub fn train_stage1<T: Real>(samples: &[Stage1Sample<T>], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_stage1_with(samples, cfg, &mut |_| {})
}

pub fn train_stage1_with<T: Real>(
    samples: &[Stage1Sample<T>],
    cfg: &TrainConfig,
    on_step: &mut dyn FnMut(&LossRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::pre("stage-1 dataset is empty"));
    }
    let model = Model::new(&cfg.model)?;
    let (h, w) = spatial(&samples[0].events);
    let mut params = model.init_restoration::<T>(cfg.seed)?;
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut batcher = Batcher::new(cfg.seed, samples.len(), cfg);
    let mut history = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let picks = batcher.draw(h, w);
        let b = batch_of(&picks, cfg.crop, |i| {
            vec![samples[i].events.clone(), samples[i].target.clone()]
        })?;
        let mut g = Graph::new();
        let x = g.constant(b[0].clone());
        let out = model.restoration.forward(&mut g, &params, x)?;
        let gate_mask = g.constant(gate(g.value(out.prob)));
        let restored = g.mul(out.voxels, gate_mask)?;
        let loss = stage1_loss(&mut g, out.prob, restored, &b[1], cfg.lambda1)?;
        let rec = LossRecord {
            iteration,
            terms: LossTerms::read(&g, &loss),
        };
        if !rec.terms.total.is_finite() {
            return Err(Error::Numeric { op: "stage1 loss" });
        }
        let grads = g.backward(loss.total, &params)?;
        adam_step(&mut params, &grads, &mut adam)?;
        on_step(&rec);
        history.push(rec);
    }
    Ok(TrainOutcome { params, history })
}

/// Restored voxels `Er` for every sample under fixed restoration parameters.
pub fn restore_all<T: Real>(
    model: &Model,
    params: &ParamTree<T>,
    samples: &[Stage2Sample<T>],
) -> Result<Vec<Tensor<T>>> {
    samples
        .iter()
        .map(|s| Ok(model.restoration.restore(params, &s.events)?.restored))
        .collect()
}

/// Train everything but the restoration network, whose parameters are taken
/// from `stage1` and frozen.
pub fn train_stage2<T: Real>(
    samples: &[Stage2Sample<T>],
    stage1: Option<&ParamTree<T>>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_stage2_with(samples, stage1, cfg, &RandomConvFeatures::default(), &mut |_| {})
}

pub fn train_stage2_with<T: Real>(
    samples: &[Stage2Sample<T>],
    stage1: Option<&ParamTree<T>>,
    cfg: &TrainConfig,
    extractor: &dyn FeatureExtractor<T>,
    on_step: &mut dyn FnMut(&LossRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let stage1 = stage1.ok_or_else(|| Error::pre("stage 2 needs stage-1 restoration parameters"))?;
    if samples.is_empty() {
        return Err(Error::pre("stage-2 dataset is empty"));
    }
    let model = Model::new(&cfg.model)?;
    let restoration = stage1.subtree(RestorationNet::PREFIX);
    model.check_restoration(&restoration)?;
    let restored = restore_all(&model, &restoration, samples)?;
    let mut params = restoration;
    params.merge(model.init_enhancement::<T>(cfg.seed.wrapping_add(1))?)?;
    params.freeze_prefix(RestorationNet::PREFIX);

    let (h, w) = spatial(&samples[0].low);
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut batcher = Batcher::new(cfg.seed, samples.len(), cfg);
    let mut history = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let picks = batcher.draw(h, w);
        let b = batch_of(&picks, cfg.crop, |i| {
            vec![samples[i].low.clone(), restored[i].clone(), samples[i].gt.clone()]
        })?;
        let mask = if cfg.model.event_guidance {
            Some(model.guidance_masks(&b[1])?)
        } else {
            None
        };
        let mut g = Graph::new();
        let low = g.constant(b[0].clone());
        let er = g.constant(b[1].clone());
        let pred = model.enhancement.forward(&mut g, &params, low, er, mask.as_ref())?;
        let loss = stage2_loss(&mut g, pred, &b[2], cfg.lambda2, extractor)?;
        let rec = LossRecord {
            iteration,
            terms: LossTerms::read(&g, &loss),
        };
        if !rec.terms.total.is_finite() {
            return Err(Error::Numeric { op: "stage2 loss" });
        }
        let grads = g.backward(loss.total, &params)?;
        adam_step(&mut params, &grads, &mut adam)?;
        on_step(&rec);
        history.push(rec);
    }
    Ok(TrainOutcome { params, history })
}

/// Full-frame enhanced outputs for stage-2 samples.
pub fn predict_stage2<T: Real>(
    model: &Model,
    params: &ParamTree<T>,
    samples: &[Stage2Sample<T>],
) -> Result<Vec<Image>> {
    let restored = restore_all(model, params, samples)?;
    samples
        .iter()
        .zip(&restored)
        .map(|(s, r)| model.enhance(params, &Image::from_chw(&s.low)?, r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::ModelConfig;
    use crate::scenegen::{synth_pair, DarkeningMode};
    use crate::training::{stage1_samples, stage2_samples};

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            crop: 8,
            batch: 2,
            iterations: 3,
            model: ModelConfig {
                channels: 4,
                frames: 2,
                pooled: 8,
                patch: 4,
                heads: 2,
                eift_modules: 1,
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn pairs() -> Vec<crate::scenegen::ClipPair> {
        (0..2)
            .map(|s| synth_pair(12, 12, 2, s, DarkeningMode::Sampled).unwrap().2)
            .collect()
    }

    #[test]
    fn stage1_zero_iterations_returns_initialisation() {
        let mut cfg = tiny_cfg();
        cfg.iterations = 0;
        let s = stage1_samples::<f64>(&pairs(), &cfg).unwrap();
        let out = train_stage1(&s, &cfg).unwrap();
        let init = Model::new(&cfg.model)
            .unwrap()
            .init_restoration::<f64>(cfg.seed)
            .unwrap();
        assert_eq!(out.params, init);
        assert!(out.history.is_empty());
    }

    #[test]
    fn stage1_is_deterministic_and_rejects_empty_data() {
        let cfg = tiny_cfg();
        let s = stage1_samples::<f32>(&pairs(), &cfg).unwrap();
        let a = train_stage1(&s, &cfg).unwrap();
        let b = train_stage1(&s, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        assert!(train_stage1::<f32>(&[], &cfg).is_err());
        let csv = loss_history_csv(1, &a.history);
        assert!(csv.starts_with("iteration,l_m,l_v,total\n0,"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn stage2_freezes_restoration() {
        let cfg = tiny_cfg();
        let p = pairs();
        let s1 = train_stage1(&stage1_samples::<f32>(&p, &cfg).unwrap(), &cfg).unwrap();
        let s2 = stage2_samples::<f32>(&p, &cfg).unwrap();
        assert!(train_stage2(&s2, None, &cfg).is_err());
        let out = train_stage2(&s2, Some(&s1.params), &cfg).unwrap();
        for (name, t) in s1.params.iter() {
            assert_eq!(out.params.get(name).unwrap().data(), t.data(), "{name}");
        }
        let model = Model::new(&cfg.model).unwrap();
        model.check_enhancement(&out.params.subtree("enhance.")).unwrap();
        assert!(out.history.iter().all(|r| r.terms.total.is_finite()));
        let preds = predict_stage2(&model, &out.params, &s2).unwrap();
        assert_eq!(preds.len(), s2.len());
        let mut bad = s1.params.clone();
        let name = bad.names().next().unwrap().clone();
        *bad.get_mut(&name).unwrap() = Tensor::zeros(&[1]);
        assert!(train_stage2(&s2, Some(&bad), &cfg).is_err());
    }
}
