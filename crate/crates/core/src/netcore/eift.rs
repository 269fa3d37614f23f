//! Event/image fusion: a cross-channel transform (CCT) followed by an
//! element-wise product (EWP), both driven by the modulation feature.

use crate::error::{Error, Result};
use crate::numgrid::{Graph, ParamTree, Real, Var};

use super::layers::{Conv, ParamSpec};

/// One fusion block. `f2` (3x3, ReLU) embeds the modulation feature;
/// `f3`/`f4` (1x1) give Q and K; `f1` (1x1) projects the main feature;
/// `f5` (3x3) yields the spatial gate and `f6` (1x1) the gated values.
#[derive(Clone, Debug)]
pub struct EiftBlock {
    pub f1: Conv,
    pub f2: Conv,
    pub f3: Conv,
    pub f4: Conv,
    pub f5: Conv,
    pub f6: Conv,
    channels: usize,
}

fn check_pair<T: Real>(g: &Graph<T>, a: Var, b: Var, channels: usize) -> Result<[usize; 4]> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb || sa.len() != 4 || sa[1] != channels {
        return Err(Error::shape(
            "eift",
            format!("main {sa:?} and modulation {sb:?} must both be [N, {channels}, H, W]"),
        ));
    }
    Ok([sa[0], sa[1], sa[2], sa[3]])
}

impl EiftBlock {
    pub fn new(name: &str, channels: usize) -> Self {
        let c = channels;
        Self {
            f1: Conv::new(format!("{name}.f1"), c, c, 1, 1),
            f2: Conv::new(format!("{name}.f2"), c, c, 3, 1),
            f3: Conv::new(format!("{name}.f3"), c, c, 1, 1),
            f4: Conv::new(format!("{name}.f4"), c, c, 1, 1),
            f5: Conv::new(format!("{name}.f5"), c, c, 3, 1),
            f6: Conv::new(format!("{name}.f6"), c, c, 1, 1),
            channels,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        for f in [&self.f1, &self.f2, &self.f3, &self.f4, &self.f5, &self.f6] {
            f.specs(out);
        }
    }

    /// `relu(f2(modulation))`, shared by both halves of the block.
    pub fn embed<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, modulation: Var) -> Result<Var> {
        let m = self.f2.forward(g, p, modulation)?;
        Ok(g.relu(m))
    }

    /// Cross-channel transform from an embedded modulation feature.
    /// Returns `(X, channel map)` with the map shaped `[N, C, C]`.
    pub fn cct_embedded<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &ParamTree<T>,
        main: Var,
        embedded: Var,
    ) -> Result<(Var, Var)> {
        let [n, c, h, w] = check_pair(g, main, embedded, self.channels)?;
        let hw = h * w;
        let q = self.f3.forward(g, p, embedded)?;
        let q = g.reshape(q, &[n, c, hw])?;
        let q = g.permute(q, &[0, 2, 1])?; // [N, HW, C]
        let k = self.f4.forward(g, p, embedded)?;
        let k = g.reshape(k, &[n, c, hw])?; // [N, C, HW]
        let logits = g.matmul(k, q)?;
        let map = g.softmax(logits, 2)?;
        // X[s, c] = sum_c' F1[s, c'] map[c', c], computed channel-major
        let f1 = self.f1.forward(g, p, main)?;
        let f1 = g.reshape(f1, &[n, c, hw])?;
        let map_t = g.permute(map, &[0, 2, 1])?;
        let x = g.matmul(map_t, f1)?;
        let x = g.reshape(x, &[n, c, h, w])?;
        Ok((x, map))
    }

    /// Element-wise product `sigmoid(f5(X)) * f6(embedded)`; also returns the gate.
    pub fn ewp_embedded<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &ParamTree<T>,
        x: Var,
        embedded: Var,
    ) -> Result<(Var, Var)> {
        check_pair(g, x, embedded, self.channels)?;
        let a = self.f5.forward(g, p, x)?;
        let gate = g.sigmoid(a);
        let v = self.f6.forward(g, p, embedded)?;
        Ok((g.mul(gate, v)?, gate))
    }

    pub fn cct<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, main: Var, modulation: Var) -> Result<(Var, Var)> {
        check_pair(g, main, modulation, self.channels)?;
        let e = self.embed(g, p, modulation)?;
        self.cct_embedded(g, p, main, e)
    }

    pub fn ewp<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, x: Var, modulation: Var) -> Result<(Var, Var)> {
        check_pair(g, x, modulation, self.channels)?;
        let e = self.embed(g, p, modulation)?;
        self.ewp_embedded(g, p, x, e)
    }

    /// `main + EWP(CCT(main, modulation), modulation)`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, main: Var, modulation: Var) -> Result<Var> {
        check_pair(g, main, modulation, self.channels)?;
        let e = self.embed(g, p, modulation)?;
        let (x, _) = self.cct_embedded(g, p, main, e)?;
        let (f, _) = self.ewp_embedded(g, p, x, e)?;
        g.add(main, f)
    }
}

/// Two blocks: events modulated by the image, then the image modulated by
/// the updated events.
#[derive(Clone, Debug)]
pub struct EiftModule {
    pub event_block: EiftBlock,
    pub image_block: EiftBlock,
}

impl EiftModule {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            event_block: EiftBlock::new(&format!("{name}.block0"), channels),
            image_block: EiftBlock::new(&format!("{name}.block1"), channels),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.event_block.specs(out);
        self.image_block.specs(out);
    }

    /// Returns the updated `(F_E, F_I)`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, events: Var, image: Var) -> Result<(Var, Var)> {
        let events = self.event_block.forward(g, p, events, image)?;
        let image = self.image_block.forward(g, p, image, events)?;
        Ok((events, image))
    }
}
