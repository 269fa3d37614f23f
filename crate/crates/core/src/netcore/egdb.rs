//! Event-guided dual branch: a pooled patch transformer for regions without
//! strong events and a residual branch for regions with them.

use crate::error::{Error, Result};
use crate::numgrid::{Graph, ParamTree, Real, Tensor, Var};

use super::layers::{LayerNorm, Linear, ParamSpec, ResBlock};
use super::ModelConfig;

/// Pre-norm transformer layer: `F' = MHA(LN(F)) + F`, `O = FFN(LN(F')) + F'`.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    norm1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    norm2: LayerNorm,
    ffn1: Linear,
    ffn2: Linear,
    heads: usize,
    dim: usize,
}

impl TransformerLayer {
    pub fn new(name: &str, dim: usize, heads: usize) -> Self {
        Self {
            norm1: LayerNorm::new(format!("{name}.norm1"), dim),
            q: Linear::new(format!("{name}.attn.q"), dim, dim),
            k: Linear::new(format!("{name}.attn.k"), dim, dim),
            v: Linear::new(format!("{name}.attn.v"), dim, dim),
            proj: Linear::new(format!("{name}.attn.proj"), dim, dim),
            norm2: LayerNorm::new(format!("{name}.norm2"), dim),
            ffn1: Linear::new(format!("{name}.ffn.fc1"), dim, 2 * dim),
            ffn2: Linear::new(format!("{name}.ffn.fc2"), 2 * dim, dim),
            heads,
            dim,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.norm1.specs(out);
        for l in [&self.q, &self.k, &self.v, &self.proj] {
            l.specs(out);
        }
        self.norm2.specs(out);
        self.ffn1.specs(out);
        self.ffn2.specs(out);
    }

    fn split_heads<T: Real>(&self, g: &mut Graph<T>, x: Var, batch: usize, tokens: usize) -> Result<Var> {
        let hd = self.dim / self.heads;
        let x = g.reshape(x, &[batch, tokens, self.heads, hd])?;
        let x = g.permute(x, &[0, 2, 1, 3])?;
        g.reshape(x, &[batch * self.heads, tokens, hd])
    }

    /// Multi-head self-attention over `[batch, tokens, dim]`.
    pub fn attention<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (batch, tokens) = (s[0], s[1]);
        let hd = self.dim / self.heads;
        let q = self.q.forward(g, p, x)?;
        let k = self.k.forward(g, p, x)?;
        let v = self.v.forward(g, p, x)?;
        let q = self.split_heads(g, q, batch, tokens)?;
        let k = self.split_heads(g, k, batch, tokens)?;
        let v = self.split_heads(g, v, batch, tokens)?;
        let kt = g.permute(k, &[0, 2, 1])?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, T::c(1.0 / (hd as f64).sqrt()));
        let attn = g.softmax(scores, 2)?;
        let o = g.matmul(attn, v)?;
        let o = g.reshape(o, &[batch, self.heads, tokens, hd])?;
        let o = g.permute(o, &[0, 2, 1, 3])?;
        let o = g.reshape(o, &[batch, tokens, self.dim])?;
        self.proj.forward(g, p, o)
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, x: Var) -> Result<Var> {
        let n = self.norm1.forward(g, p, x)?;
        let a = self.attention(g, p, n)?;
        let x = g.add(a, x)?;
        let n = self.norm2.forward(g, p, x)?;
        let f = self.ffn1.forward(g, p, n)?;
        let f = g.relu(f);
        let f = self.ffn2.forward(g, p, f)?;
        g.add(f, x)
    }
}

#[derive(Clone, Debug)]
pub struct Egdb {
    transformer: TransformerLayer,
    local: [ResBlock; 2],
    channels: usize,
    pooled: usize,
    patch: usize,
    guided: bool,
}

/// `[N, C, H, W]` constant holding `mask` (shape `[N, H, W]`) in every channel,
/// or its complement.
fn broadcast_mask<T: Real>(mask: &Tensor<T>, channels: usize, complement: bool) -> Result<Tensor<T>> {
    let s = mask.shape();
    let plane = s[1] * s[2];
    let mut out = Vec::with_capacity(s[0] * channels * plane);
    for n in 0..s[0] {
        let m = &mask.data()[n * plane..(n + 1) * plane];
        for _ in 0..channels {
            out.extend(m.iter().map(|&v| if complement { T::one() - v } else { v }));
        }
    }
    Tensor::from_vec(&[s[0], channels, s[1], s[2]], out)
}

impl Egdb {
    pub fn new(name: &str, cfg: &ModelConfig) -> Self {
        let c = cfg.channels;
        Self {
            transformer: TransformerLayer::new(&format!("{name}.global"), 2 * c, cfg.heads),
            local: [
                ResBlock::new(&format!("{name}.local0"), c),
                ResBlock::new(&format!("{name}.local1"), c),
            ],
            channels: c,
            pooled: cfg.pooled,
            patch: cfg.patch,
            guided: cfg.event_guidance,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.transformer.specs(out);
        for r in &self.local {
            r.specs(out);
        }
    }

    /// Split `[N, D, S, S]` into `[N * (S/p)^2, p*p, D]` patch token sets.
    pub fn to_patches<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (n, d, side) = (s[0], s[1], s[2]);
        let (p, grid) = (self.patch, side / self.patch);
        let x = g.reshape(x, &[n, d, grid, p, grid, p])?;
        let x = g.permute(x, &[0, 2, 4, 3, 5, 1])?;
        g.reshape(x, &[n * grid * grid, p * p, d])
    }

    /// Inverse of [`Egdb::to_patches`].
    pub fn from_patches<T: Real>(&self, g: &mut Graph<T>, x: Var, n: usize) -> Result<Var> {
        let d = g.shape(x)[2];
        let (p, grid) = (self.patch, self.pooled / self.patch);
        let x = g.reshape(x, &[n, grid, grid, p, p, d])?;
        let x = g.permute(x, &[0, 5, 1, 3, 2, 4])?;
        g.reshape(x, &[n, d, self.pooled, self.pooled])
    }

    /// Global branch on `[N, 2C, H, W]`; returns the first `C` channels at full size.
    pub fn global_branch<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, x: Var) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let pooled = g.adaptive_avg_pool(x, self.pooled, self.pooled)?;
        let tokens = self.to_patches(g, pooled)?;
        let o = self.transformer.forward(g, p, tokens)?;
        let o = self.from_patches(g, o, s[0])?;
        let o = g.upsample_bilinear(o, s[2], s[3])?;
        g.narrow(o, 1, 0, self.channels)
    }

    pub fn local_branch<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for r in &self.local {
            h = r.forward(g, p, h)?;
        }
        Ok(h)
    }

    /// `mask`: `[N, H, W]` binary guidance at feature resolution (ignored
    /// when guidance is disabled). Output `[N, 2C, H, W]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &ParamTree<T>,
        events: Var,
        image: Var,
        mask: Option<&Tensor<T>>,
    ) -> Result<Var> {
        let s = g.shape(image).to_vec();
        if g.shape(events) != s.as_slice() || s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape(
                "egdb",
                format!("events {:?} image {s:?}", g.shape(events)),
            ));
        }
        let (global_image, local_image) = if self.guided {
            let mask = mask.ok_or_else(|| Error::pre("guided enhancement needs a mask"))?;
            if mask.shape() != [s[0], s[2], s[3]] {
                return Err(Error::shape(
                    "egdb",
                    format!("mask {:?} for features {s:?}", mask.shape()),
                ));
            }
            let keep = g.constant(broadcast_mask(mask, self.channels, false)?);
            let drop = g.constant(broadcast_mask(mask, self.channels, true)?);
            (g.mul(drop, image)?, g.mul(keep, image)?)
        } else {
            (image, image)
        };
        let joined = g.concat(&[events, global_image], 1)?;
        let fg = self.global_branch(g, p, joined)?;
        let fl = self.local_branch(g, p, local_image)?;
        g.concat(&[fg, fl], 1)
    }
}
