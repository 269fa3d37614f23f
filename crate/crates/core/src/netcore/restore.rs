//! Event restoration: encoder to quarter resolution, two residual blocks,
//! decoder back to full resolution, then probability and voxel heads.

use crate::error::{Error, Result};
use crate::numgrid::{Graph, ParamTree, Real, Tensor, Var};

use super::layers::{Conv, ParamSpec, ResBlock};
use super::ModelConfig;

/// Probability of a restored event being kept.
pub const GATE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug)]
pub struct RestorationNet {
    enc0: Conv,
    enc1: Conv,
    enc2: Conv,
    res: [ResBlock; 2],
    dec1: Conv,
    dec2: Conv,
    head_p: Conv,
    head_v: Conv,
}

/// Graph handles for a restoration forward pass.
#[derive(Clone, Copy, Debug)]
pub struct RestorationVars {
    pub prob: Var,
    pub voxels: Var,
}

/// `P`, `V` and the gated grid `Er = [P >= 0.5] * V`, each `B x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct RestorationOutput<T> {
    pub prob: Tensor<T>,
    pub voxels: Tensor<T>,
    pub restored: Tensor<T>,
}

/// The 0/1 gate of `prob`.
pub fn gate<T: Real>(prob: &Tensor<T>) -> Tensor<T> {
    let th = T::c(GATE_THRESHOLD);
    prob.map(|p| if p >= th { T::one() } else { T::zero() })
}

/// `gate(prob) * voxels`, elementwise and exact.
pub fn compose_restored<T: Real>(prob: &Tensor<T>, voxels: &Tensor<T>) -> Result<Tensor<T>> {
    let th = T::c(GATE_THRESHOLD);
    prob.zip_map(voxels, |p, v| if p >= th { v } else { T::zero() })
}

impl RestorationNet {
    pub const PREFIX: &'static str = "restore.";

    pub fn new(cfg: &ModelConfig) -> Self {
        let b = cfg.voxel_channels();
        let c = cfg.channels;
        let n = |s: &str| format!("restore.{s}");
        Self {
            enc0: Conv::new(n("enc0"), b, c, 3, 1),
            enc1: Conv::new(n("enc1"), c, 2 * c, 3, 2),
            enc2: Conv::new(n("enc2"), 2 * c, 4 * c, 3, 2),
            res: [ResBlock::new(&n("res0"), 4 * c), ResBlock::new(&n("res1"), 4 * c)],
            dec1: Conv::new(n("dec1"), 4 * c, 2 * c, 3, 1),
            dec2: Conv::new(n("dec2"), 2 * c, c, 3, 1),
            head_p: Conv::new(n("head_p"), c, b, 3, 1),
            head_v: Conv::new(n("head_v"), c, b, 3, 1),
        }
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        for conv in [&self.enc0, &self.enc1, &self.enc2] {
            conv.specs(&mut out);
        }
        for r in &self.res {
            r.specs(&mut out);
        }
        for conv in [&self.dec1, &self.dec2, &self.head_p, &self.head_v] {
            conv.specs(&mut out);
        }
        out
    }

    /// `events`: `[N, B, H, W]` with `H`, `W` divisible by 4.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, events: Var) -> Result<RestorationVars> {
        let s = g.shape(events).to_vec();
        if s.len() != 4 || s[1] != self.enc0.cin {
            return Err(Error::shape(
                "restore_events",
                format!("expected [N, {}, H, W], got {s:?}", self.enc0.cin),
            ));
        }
        if !s[2].is_multiple_of(4) || !s[3].is_multiple_of(4) {
            return Err(Error::pre(format!(
                "restoration needs H and W divisible by 4, got {}x{}",
                s[2], s[3]
            )));
        }
        let s0 = self.enc0.forward(g, p, events)?;
        let s0 = g.relu(s0);
        let s1 = self.enc1.forward(g, p, s0)?;
        let s1 = g.relu(s1);
        let mut h = self.enc2.forward(g, p, s1)?;
        h = g.relu(h);
        for r in &self.res {
            h = r.forward(g, p, h)?;
        }
        let u = g.upsample_nearest(h, 2)?;
        let u = self.dec1.forward(g, p, u)?;
        let u = g.relu(u);
        let u = g.add(u, s1)?;
        let u = g.upsample_nearest(u, 2)?;
        let u = self.dec2.forward(g, p, u)?;
        let u = g.relu(u);
        let u = g.add(u, s0)?;
        let logits = self.head_p.forward(g, p, u)?;
        let prob = g.sigmoid(logits);
        let voxels = self.head_v.forward(g, p, u)?;
        Ok(RestorationVars { prob, voxels })
    }

    /// Eager restoration of one `B x H x W` grid.
    pub fn restore<T: Real>(&self, p: &ParamTree<T>, events: &Tensor<T>) -> Result<RestorationOutput<T>> {
        let mut shape = vec![1];
        shape.extend_from_slice(events.shape());
        let mut g = Graph::new();
        let x = g.constant(events.clone().reshape(&shape)?);
        let out = self.forward(&mut g, p, x)?;
        let prob = g.value(out.prob).clone().reshape(events.shape())?;
        let voxels = g.value(out.voxels).clone().reshape(events.shape())?;
        let restored = compose_restored(&prob, &voxels)?;
        Ok(RestorationOutput { prob, voxels, restored })
    }
}
