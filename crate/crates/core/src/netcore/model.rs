use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eventsim::{egdb_mask, GUIDANCE_THRESHOLD};
use crate::image::Image;
use crate::numgrid::{Graph, ParamTree, Real, Tensor, Var};

use super::egdb::Egdb;
use super::eift::EiftModule;
use super::layers::{check_params, init_params, Conv, ParamSpec, ResBlock};
use super::restore::RestorationNet;
use super::ModelConfig;

/// Image/event encoders, fusion modules, dual-branch enhancement and decoder.
#[derive(Clone, Debug)]
pub struct EnhanceNet {
    image_encoder: Conv,
    event_encoder: Conv,
    fusion: Vec<EiftModule>,
    egdb: Egdb,
    decoder: [ResBlock; 2],
    out: Conv,
    cfg: ModelConfig,
}

impl EnhanceNet {
    pub const PREFIX: &'static str = "enhance.";

    pub fn new(cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        let n = |s: &str| format!("enhance.{s}");
        Self {
            image_encoder: Conv::new(n("image_encoder"), 3, c, 3, 1),
            event_encoder: Conv::new(n("event_encoder"), cfg.voxel_channels(), c, 3, 1),
            fusion: (0..cfg.eift_modules)
                .map(|i| EiftModule::new(&n(&format!("eift.{i}")), c))
                .collect(),
            egdb: Egdb::new(&n("egdb"), cfg),
            decoder: [
                ResBlock::new(&n("decoder.res0"), 2 * c),
                ResBlock::new(&n("decoder.res1"), 2 * c),
            ],
            out: Conv::new(n("decoder.out"), 2 * c, 3, 3, 1),
            cfg: cfg.clone(),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        self.image_encoder.specs(&mut out);
        self.event_encoder.specs(&mut out);
        for m in &self.fusion {
            m.specs(&mut out);
        }
        self.egdb.specs(&mut out);
        for r in &self.decoder {
            r.specs(&mut out);
        }
        self.out.specs(&mut out);
        out
    }

    pub fn fusion(&self) -> &[EiftModule] {
        &self.fusion
    }

    pub fn egdb(&self) -> &Egdb {
        &self.egdb
    }

    /// Unclamped prediction `[N, 3, H, W]` from the dark frame `[N, 3, H, W]`,
    /// restored voxels `[N, B, H, W]` and guidance masks `[N, H, W]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &ParamTree<T>,
        low: Var,
        restored: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let (sl, sr) = (g.shape(low).to_vec(), g.shape(restored).to_vec());
        if sl.len() != 4
            || sl[1] != 3
            || sr.len() != 4
            || sr[1] != self.cfg.voxel_channels()
            || sl[0] != sr[0]
            || sl[2..] != sr[2..]
        {
            return Err(Error::shape("enhance", format!("frame {sl:?} with voxels {sr:?}")));
        }
        let mut image = self.image_encoder.forward(g, p, low)?;
        let mut events = self.event_encoder.forward(g, p, restored)?;
        for m in &self.fusion {
            (events, image) = m.forward(g, p, events, image)?;
        }
        let mut h = self.egdb.forward(g, p, events, image, mask)?;
        for r in &self.decoder {
            h = r.forward(g, p, h)?;
        }
        self.out.forward(g, p, h)
    }
}

/// Restoration network plus enhancement network.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub restoration: RestorationNet,
    pub enhancement: EnhanceNet,
}

impl Model {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            restoration: RestorationNet::new(cfg),
            enhancement: EnhanceNet::new(cfg),
        })
    }

    pub fn init_restoration<T: Real>(&self, seed: u64) -> Result<ParamTree<T>> {
        init_params(&self.restoration.specs(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn init_enhancement<T: Real>(&self, seed: u64) -> Result<ParamTree<T>> {
        init_params(&self.enhancement.specs(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Both networks, restoration seeded with `seed` and enhancement with `seed + 1`.
    pub fn init<T: Real>(&self, seed: u64) -> Result<ParamTree<T>> {
        let mut p = self.init_restoration(seed)?;
        p.merge(self.init_enhancement(seed.wrapping_add(1))?)?;
        Ok(p)
    }

    pub fn check_restoration<T: Real>(&self, p: &ParamTree<T>) -> Result<()> {
        check_params(&self.restoration.specs(), p)
    }

    pub fn check_enhancement<T: Real>(&self, p: &ParamTree<T>) -> Result<()> {
        check_params(&self.enhancement.specs(), p)
    }

    /// Guidance masks `[N, H, W]` for restored voxels `[N, B, H, W]`.
    pub fn guidance_masks<T: Real>(&self, restored: &Tensor<T>) -> Result<Tensor<T>> {
        let s = restored.shape();
        let mut out = Vec::with_capacity(s[0] * s[2] * s[3]);
        for n in 0..s[0] {
            let m = egdb_mask(
                &restored.index_outer(n),
                self.cfg.frames,
                (s[2], s[3]),
                GUIDANCE_THRESHOLD,
            )?;
            out.extend(m.values.data().iter().map(|&v| T::c(v)));
        }
        Tensor::from_vec(&[s[0], s[2], s[3]], out)
    }

    /// Enhance one frame given its restored voxel grid `B x H x W`.
    pub fn enhance<T: Real>(&self, p: &ParamTree<T>, low: &Image, restored: &Tensor<T>) -> Result<Image> {
        let (h, w) = (low.height(), low.width());
        if restored.shape() != [self.cfg.voxel_channels(), h, w] {
            return Err(Error::shape(
                "enhance",
                format!("voxels {:?} for a {h}x{w} frame", restored.shape()),
            ));
        }
        let batched = restored.clone().reshape(&[1, self.cfg.voxel_channels(), h, w])?;
        let mask = if self.cfg.event_guidance {
            Some(self.guidance_masks(&batched)?)
        } else {
            None
        };
        let mut g = Graph::new();
        let x = g.constant(low.to_chw::<T>().reshape(&[1, 3, h, w])?);
        let r = g.constant(batched);
        let y = self.enhancement.forward(&mut g, p, x, r, mask.as_ref())?;
        let y = g.clamp(y, T::zero(), T::one());
        Image::from_chw(g.value(y))
    }
}
