//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive as a node holding its forward value.
//! [`Graph::backward`] walks the tape in reverse, summing gradient
//! contributions whenever a value feeds more than one consumer.

use std::collections::BTreeMap;
use std::rc::Rc;

use super::tensor::{numel, strides};
use super::{ParamTree, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Gradients keyed by parameter name.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddRow(Var, Var),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_b: bool,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Resample {
        x: Var,
        rows: Rc<Tensor<T>>,
        cols: Rc<Tensor<T>>,
    },
    Relu(Var),
    Sigmoid(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Vec<T>,
        rstd: Vec<T>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Mean(Var),
    MeanAbs(Var),
    Bce {
        p: Var,
        target: Tensor<T>,
        lo: T,
        hi: T,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::AddRow(..) => "add_row",
            Op::MatMul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Resample { .. } => "resample",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax { .. } => "softmax",
            Op::Clamp { .. } => "clamp",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Concat { .. } => "concat",
            Op::Narrow { .. } => "narrow",
            Op::Reshape(..) => "reshape",
            Op::Permute { .. } => "permute",
            Op::Mean(..) => "mean",
            Op::MeanAbs(..) => "mean_abs",
            Op::Bce { .. } => "bce",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation over tensors and named parameters.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn record(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let rg = parents.iter().any(|&p| self.rg(p));
        self.push(value, op, rg)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable input that is not a named parameter.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf for the named parameter; repeated lookups share one node.
    ///
    /// Frozen parameters are recorded as constants.
    pub fn param(&mut self, tree: &ParamTree<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = tree
            .get(name)
            .ok_or_else(|| Error::pre(format!("missing parameter {name}")))?
            .clone();
        let v = self.push(t, Op::Leaf, !tree.is_frozen(name));
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let v = v.map_err(|_| Error::shape("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))))?;
        Ok(self.record(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("sub", self.shape(a), self.shape(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.record(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("mul", self.shape(a), self.shape(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.record(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.record(v, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.record(v, Op::AddScalar(a), &[a])
    }

    /// `x[..., d] + bias[d]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [d] {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + {:?}", self.shape(x), self.shape(bias)),
            ));
        }
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(d) {
            for (o, &bb) in row.iter_mut().zip(&b) {
                *o += bb;
            }
        }
        Ok(self.record(v, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a > T::zero() { a } else { T::zero() });
        self.record(v, Op::Relu(x), &[x])
    }

    /// Logistic function; outputs are kept strictly inside (0, 1).
    pub fn sigmoid(&mut self, x: Var) -> Var {
        let lo = T::min_positive_value();
        let hi = T::one() - T::epsilon();
        let v = self.value(x).map(|a| sigmoid(a).max(lo).min(hi));
        self.record(v, Op::Sigmoid(x), &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let v = self.value(x).map(|a| a.max(lo).min(hi));
        self.record(v, Op::Clamp { x, lo, hi }, &[x])
    }

    // ---- linear algebra ----------------------------------------------

    /// Batched matrix product `[.., m, k] x [.., k, n]`; a 2-D right operand is
    /// shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let err = || Error::shape("matmul", format!("{sa:?} x {sb:?}"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(err());
        }
        let batch = numel(&sa[..sa.len() - 2]);
        let shared_b = sb.len() == 2;
        if !shared_b && sb[..sb.len() - 2] != sa[..sa.len() - 2] {
            return Err(err());
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            let bs = if shared_b { bv } else { &bv[i * k * n..(i + 1) * k * n] };
            T::gemm(
                false,
                false,
                m,
                k,
                n,
                T::one(),
                &av[i * m * k..(i + 1) * m * k],
                bs,
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        let v = Tensor::from_vec(&shape, out)?;
        Ok(self.record(
            v,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
            },
            &[a, b],
        ))
    }

    /// 2-D convolution over `[N, Cin, H, W]` with weight `[Cout, Cin, k, k]`
    /// and zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let err = |d: String| Error::shape("conv2d", d);
        if sx.len() != 4 || sw.len() != 4 || sw[2] != sw[3] || stride == 0 {
            return Err(err(format!("input {sx:?} weight {sw:?} stride {stride}")));
        }
        if sx[1] != sw[1] {
            return Err(err(format!("input channels {} vs weight {}", sx[1], sw[1])));
        }
        let k = sw[2];
        if sx[2] + 2 * pad < k || sx[3] + 2 * pad < k {
            return Err(err(format!("kernel {k} larger than padded input {sx:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(err(format!("bias {:?} for {} outputs", self.shape(b), sw[0])));
            }
        }
        let geom = ConvGeom {
            batch: sx[0],
            cin: sx[1],
            cout: sw[0],
            h: sx[2],
            w: sx[3],
            k,
            stride,
            pad,
            ho: (sx[2] + 2 * pad - k) / stride + 1,
            wo: (sx[3] + 2 * pad - k) / stride + 1,
        };
        let out = conv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let v = Tensor::from_vec(&[geom.batch, geom.cout, geom.ho, geom.wo], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.record(v, Op::Conv2d { x, w, b, geom }, &parents))
    }

    /// Separable linear resampling of the two trailing axes:
    /// `y = rows * x * cols^T` with `rows: [Ho, H]` and `cols: [Wo, W]`.
    pub fn resample(&mut self, x: Var, rows: Rc<Tensor<T>>, cols: Rc<Tensor<T>>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let nd = sx.len();
        if nd < 2
            || rows.ndim() != 2
            || cols.ndim() != 2
            || rows.shape()[1] != sx[nd - 2]
            || cols.shape()[1] != sx[nd - 1]
        {
            return Err(Error::shape(
                "resample",
                format!("{sx:?} with rows {:?} cols {:?}", rows.shape(), cols.shape()),
            ));
        }
        let (h, w) = (sx[nd - 2], sx[nd - 1]);
        let (ho, wo) = (rows.shape()[0], cols.shape()[0]);
        let planes = numel(&sx[..nd - 2]);
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); planes * ho * wo];
        let mut tmp = vec![T::zero(); h * wo];
        for p in 0..planes {
            T::gemm(
                false,
                true,
                h,
                w,
                wo,
                T::one(),
                &xv[p * h * w..(p + 1) * h * w],
                cols.data(),
                T::zero(),
                &mut tmp,
            );
            T::gemm(
                false,
                false,
                ho,
                h,
                wo,
                T::one(),
                rows.data(),
                &tmp,
                T::zero(),
                &mut out[p * ho * wo..(p + 1) * ho * wo],
            );
        }
        let mut shape = sx[..nd - 2].to_vec();
        shape.extend([ho, wo]);
        let v = Tensor::from_vec(&shape, out)?;
        Ok(self.record(v, Op::Resample { x, rows, cols }, &[x]))
    }

    // ---- normalisation -----------------------------------------------

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::shape("softmax", format!("axis {axis} of {s:?}")));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let mut v = self.value(x).clone();
        let d = v.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(d[base + j * inner]);
                }
                let mut sum = T::zero();
                for j in 0..len {
                    let e = (d[base + j * inner] - mx).exp();
                    d[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    d[base + j * inner] /= sum;
                }
            }
        }
        Ok(self.record(v, Op::Softmax { x, axis }, &[x]))
    }

    /// Layer normalisation over the trailing axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!("{s:?} with gamma {:?} beta {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let rows = xv.len() / d;
        let mut normed = vec![T::zero(); xv.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        let dn = T::c(d as f64);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + T::c(eps)).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let nv = (row[j] - mean) * rs;
                normed[r * d + j] = nv;
                out[r * d + j] = nv * g[j] + bt[j];
            }
        }
        let v = Tensor::from_vec(&s, out)?;
        Ok(self.record(
            v,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    // ---- layout ------------------------------------------------------

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*inputs.first().ok_or_else(|| Error::pre("concat of nothing"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {first:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{s:?} vs {first:?}")));
            }
            total += s[axis];
        }
        let outer = numel(&first[..axis]);
        let inner = numel(&first[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let t = Tensor::from_vec(&shape, out)?;
        Ok(self.record(
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape(
                "narrow",
                format!("{s:?} axis {axis} range {start}..{}", start + len),
            ));
        }
        let (outer, full, inner) = split_axis(&s, axis);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = s.clone();
        shape[axis] = len;
        let t = Tensor::from_vec(&shape, out)?;
        Ok(self.record(t, Op::Narrow { x, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.record(t, Op::Reshape(x), &[x]))
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len()
            || axes
                .iter()
                .any(|&a| a >= s.len() || std::mem::replace(&mut seen[a], true))
        {
            return Err(Error::shape("permute", format!("{axes:?} on {s:?}")));
        }
        let t = permute_tensor(self.value(x), axes);
        Ok(self.record(t, Op::Permute { x, axes: axes.to_vec() }, &[x]))
    }

    // ---- reductions --------------------------------------------------

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        self.record(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Mean absolute value (L1 reduction).
    pub fn mean_abs(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.data().iter().map(|a| a.abs()).sum::<T>() / T::c(xv.len() as f64);
        self.record(Tensor::scalar(m), Op::MeanAbs(x), &[x])
    }

    /// Mean binary cross-entropy of probabilities `p` against a fixed target,
    /// with `p` clamped to `[clamp, 1 - clamp]` before the logarithm.
    pub fn bce_mean(&mut self, p: Var, target: &Tensor<T>, clamp: f64) -> Result<Var> {
        check_same("bce", self.shape(p), target.shape())?;
        let lo = T::c(clamp);
        let hi = T::one() - lo;
        let pv = self.value(p).data();
        let n = T::c(pv.len() as f64);
        let total: T = pv
            .iter()
            .zip(target.data())
            .map(|(&pp, &t)| {
                let q = pp.max(lo).min(hi);
                t * q.ln() + (T::one() - t) * (T::one() - q).ln()
            })
            .sum();
        let v = Tensor::scalar(-total / n);
        Ok(self.record(
            v,
            Op::Bce {
                p,
                target: target.clone(),
                lo,
                hi,
            },
            &[p],
        ))
    }

    // ---- reverse pass ------------------------------------------------

    /// Reverse pass from a scalar `loss`; returns one gradient per entry of
    /// `params`, zero for parameters the loss does not reach.
    pub fn backward(&self, loss: Var, params: &ParamTree<T>) -> Result<Gradients<T>> {
        let mut grads = self.backward_all(loss)?;
        let mut out = Gradients::new();
        for (name, t) in params.iter() {
            let g = self
                .params
                .get(name)
                .and_then(|v| grads[v.0].take())
                .unwrap_or_else(|| Tensor::zeros(t.shape()));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    /// Gradient with respect to every node that requires one.
    pub fn backward_all(&self, loss: Var) -> Result<Vec<Option<Tensor<T>>>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.node_backward(node, &g)?;
            for (var, t) in contributions {
                if !t.all_finite() {
                    return Err(Error::Numeric { op: node.op.name() });
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            }
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let mut out = Vec::new();
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.emit(&mut out, *a, || g.clone());
                self.emit(&mut out, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.emit(&mut out, *a, || g.clone());
                self.emit(&mut out, *b, || g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                self.emit(&mut out, *a, || mul_data(g, self.value(*b)));
                self.emit(&mut out, *b, || mul_data(g, self.value(*a)));
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.emit(&mut out, *a, || g.map(|v| v * s));
            }
            Op::AddScalar(a) => self.emit(&mut out, *a, || g.clone()),
            Op::AddRow(x, b) => {
                self.emit(&mut out, *x, || g.clone());
                self.emit(&mut out, *b, || {
                    let d = self.value(*b).len();
                    let mut acc = vec![T::zero(); d];
                    for row in gd.chunks(d) {
                        for (a, &v) in acc.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    Tensor::from_vec(&[d], acc).expect("bias shape")
                });
            }
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
            } => {
                let (batch, m, k, n, shared_b) = (*batch, *m, *k, *n, *shared_b);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let b_at = |i: usize| {
                    if shared_b {
                        bv
                    } else {
                        &bv[i * k * n..(i + 1) * k * n]
                    }
                };
                self.emit(&mut out, *a, || {
                    let mut da = vec![T::zero(); batch * m * k];
                    for i in 0..batch {
                        T::gemm(
                            false,
                            true,
                            m,
                            n,
                            k,
                            T::one(),
                            &gd[i * m * n..(i + 1) * m * n],
                            b_at(i),
                            T::zero(),
                            &mut da[i * m * k..(i + 1) * m * k],
                        );
                    }
                    Tensor::from_vec(self.shape(*a), da).expect("matmul grad")
                });
                self.emit(&mut out, *b, || {
                    let mut db = vec![T::zero(); if shared_b { k * n } else { batch * k * n }];
                    for i in 0..batch {
                        let (dst, beta) = if shared_b {
                            (&mut db[..], if i == 0 { T::zero() } else { T::one() })
                        } else {
                            (&mut db[i * k * n..(i + 1) * k * n], T::zero())
                        };
                        T::gemm(
                            true,
                            false,
                            k,
                            m,
                            n,
                            T::one(),
                            &av[i * m * k..(i + 1) * m * k],
                            &gd[i * m * n..(i + 1) * m * n],
                            beta,
                            dst,
                        );
                    }
                    Tensor::from_vec(self.shape(*b), db).expect("matmul grad")
                });
            }
            Op::Conv2d { x, w, b, geom } => {
                let need_x = self.rg(*x);
                let need_w = self.rg(*w);
                let (dx, dw) = conv_backward(geom, self.value(*x).data(), self.value(*w).data(), gd, need_x, need_w);
                if let Some(dx) = dx {
                    out.push((*x, Tensor::from_vec(self.shape(*x), dx)?));
                }
                if let Some(dw) = dw {
                    out.push((*w, Tensor::from_vec(self.shape(*w), dw)?));
                }
                if let Some(b) = b {
                    self.emit(&mut out, *b, || {
                        let plane = geom.ho * geom.wo;
                        let mut db = vec![T::zero(); geom.cout];
                        for (idx, ch) in gd.chunks(plane).enumerate() {
                            db[idx % geom.cout] += ch.iter().copied().sum::<T>();
                        }
                        Tensor::from_vec(&[geom.cout], db).expect("bias grad")
                    });
                }
            }
            Op::Resample { x, rows, cols } => {
                self.emit(&mut out, *x, || {
                    let sx = self.shape(*x);
                    let nd = sx.len();
                    let (h, w) = (sx[nd - 2], sx[nd - 1]);
                    let (ho, wo) = (rows.shape()[0], cols.shape()[0]);
                    let planes = numel(&sx[..nd - 2]);
                    let mut dx = vec![T::zero(); planes * h * w];
                    let mut tmp = vec![T::zero(); h * wo];
                    for p in 0..planes {
                        T::gemm(
                            true,
                            false,
                            h,
                            ho,
                            wo,
                            T::one(),
                            rows.data(),
                            &gd[p * ho * wo..(p + 1) * ho * wo],
                            T::zero(),
                            &mut tmp,
                        );
                        T::gemm(
                            false,
                            false,
                            h,
                            wo,
                            w,
                            T::one(),
                            &tmp,
                            cols.data(),
                            T::zero(),
                            &mut dx[p * h * w..(p + 1) * h * w],
                        );
                    }
                    Tensor::from_vec(sx, dx).expect("resample grad")
                });
            }
            Op::Relu(x) => self.emit(&mut out, *x, || {
                g.zip_map(self.value(*x), |gv, xv| if xv > T::zero() { gv } else { T::zero() })
                    .expect("relu grad")
            }),
            Op::Sigmoid(x) => self.emit(&mut out, *x, || {
                g.zip_map(&node.value, |gv, y| gv * y * (T::one() - y))
                    .expect("sigmoid grad")
            }),
            Op::Clamp { x, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                self.emit(&mut out, *x, || {
                    g.zip_map(
                        self.value(*x),
                        |gv, xv| if xv >= lo && xv <= hi { gv } else { T::zero() },
                    )
                    .expect("clamp grad")
                });
            }
            Op::Softmax { x, axis } => self.emit(&mut out, *x, || {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let y = node.value.data();
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = T::zero();
                        for j in 0..len {
                            dot += gd[base + j * inner] * y[base + j * inner];
                        }
                        for j in 0..len {
                            let idx = base + j * inner;
                            dx[idx] = y[idx] * (gd[idx] - dot);
                        }
                    }
                }
                Tensor::from_vec(node.value.shape(), dx).expect("softmax grad")
            }),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                rstd,
            } => {
                let gam = self.value(*gamma).data();
                let d = gam.len();
                self.emit(&mut out, *x, || {
                    let dn = T::c(d as f64);
                    let mut dx = vec![T::zero(); gd.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &gd[r * d..(r + 1) * d];
                        let nr = &normed[r * d..(r + 1) * d];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let dn_j = gr[j] * gam[j];
                            m1 += dn_j;
                            m2 += dn_j * nr[j];
                        }
                        m1 /= dn;
                        m2 /= dn;
                        for j in 0..d {
                            dx[r * d + j] = rs * (gr[j] * gam[j] - m1 - nr[j] * m2);
                        }
                    }
                    Tensor::from_vec(self.shape(*x), dx).expect("layer_norm grad")
                });
                self.emit(&mut out, *gamma, || {
                    let mut dg = vec![T::zero(); d];
                    for (gr, nr) in gd.chunks(d).zip(normed.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * nr[j];
                        }
                    }
                    Tensor::from_vec(&[d], dg).expect("gamma grad")
                });
                self.emit(&mut out, *beta, || {
                    let mut db = vec![T::zero(); d];
                    for gr in gd.chunks(d) {
                        for j in 0..d {
                            db[j] += gr[j];
                        }
                    }
                    Tensor::from_vec(&[d], db).expect("beta grad")
                });
            }
            Op::Concat { inputs, axis } => {
                let s = node.value.shape();
                let outer = numel(&s[..*axis]);
                let inner = numel(&s[*axis + 1..]);
                let total = s[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis] * inner;
                    self.emit(&mut out, v, || {
                        let mut dv = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            dv.extend_from_slice(&gd[o * total + offset..o * total + offset + len]);
                        }
                        Tensor::from_vec(self.shape(v), dv).expect("concat grad")
                    });
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => self.emit(&mut out, *x, || {
                let s = self.shape(*x);
                let (outer, full, inner) = split_axis(s, *axis);
                let len = node.value.shape()[*axis];
                let mut dx = vec![T::zero(); numel(s)];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    dx[base..base + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                Tensor::from_vec(s, dx).expect("narrow grad")
            }),
            Op::Reshape(x) => self.emit(&mut out, *x, || {
                g.clone().reshape(self.shape(*x)).expect("reshape grad")
            }),
            Op::Permute { x, axes } => self.emit(&mut out, *x, || {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                permute_tensor(g, &inv)
            }),
            Op::Mean(x) => self.emit(&mut out, *x, || {
                let n = T::c(self.value(*x).len() as f64);
                Tensor::full(self.shape(*x), gd[0] / n)
            }),
            Op::MeanAbs(x) => self.emit(&mut out, *x, || {
                let n = T::c(self.value(*x).len() as f64);
                let s = gd[0] / n;
                self.value(*x).map(|v| {
                    if v > T::zero() {
                        s
                    } else if v < T::zero() {
                        -s
                    } else {
                        T::zero()
                    }
                })
            }),
            Op::Bce { p, target, lo, hi } => {
                let (lo, hi) = (*lo, *hi);
                self.emit(&mut out, *p, || {
                    let n = T::c(target.len() as f64);
                    let s = gd[0] / n;
                    self.value(*p)
                        .zip_map(target, |pv, t| {
                            if pv < lo || pv > hi {
                                T::zero()
                            } else {
                                s * ((T::one() - t) / (T::one() - pv) - t / pv)
                            }
                        })
                        .expect("bce grad")
                });
            }
        }
        Ok(out)
    }

    fn emit(&self, out: &mut Vec<(Var, Tensor<T>)>, v: Var, f: impl FnOnce() -> Tensor<T>) {
        if self.rg(v) {
            out.push((v, f()));
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(a: T) -> T {
    if a >= T::zero() {
        T::one() / (T::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

fn mul_data<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    a.zip_map(b, |x, y| x * y).expect("mul grad shape")
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

pub(crate) fn permute_tensor<T: Real>(t: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let s = t.shape();
    let in_strides = strides(s);
    let out_shape: Vec<usize> = axes.iter().map(|&a| s[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = t.len();
    let data = t.data();
    let mut out = Vec::with_capacity(n);
    let nd = out_shape.len();
    if nd == 0 {
        return t.clone();
    }
    let mut idx = vec![0usize; nd];
    let mut off = 0usize;
    let last = nd - 1;
    let (ln, ls) = (out_shape[last], src_strides[last]);
    while out.len() < n {
        for j in 0..ln {
            out.push(data[off + j * ls]);
        }
        // advance the odometer over all but the trailing axis
        let mut ax = last;
        loop {
            if ax == 0 {
                break;
            }
            ax -= 1;
            idx[ax] += 1;
            off += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Tensor::from_vec(&out_shape, out).expect("permute shape")
}

/// Output columns `ox` whose input column `ox * stride + kx - pad` lies in `0..w`.
fn valid_cols(g: &ConvGeom, kx: usize) -> (usize, usize) {
    let (s, p, w) = (g.stride as isize, g.pad as isize, g.w as isize);
    let off = kx as isize - p;
    let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
    let hi = if w - 1 - off < 0 { 0 } else { (w - 1 - off) / s + 1 };
    let lo = (lo as usize).min(g.wo);
    (lo, (hi as usize).clamp(lo, g.wo))
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (h, k, s, p) = (g.h as isize, g.k, g.stride, g.pad as isize);
    let plane = g.ho * g.wo;
    for ci in 0..g.cin {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kx);
                for oy in 0..g.ho {
                    let iy = (oy * s) as isize + ky as isize - p;
                    let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= h {
                        drow.fill(T::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    drow[..lo].fill(T::zero());
                    drow[hi..].fill(T::zero());
                    if lo < hi {
                        let first = lo * s + kx - g.pad;
                        if s == 1 {
                            drow[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (d, v) in drow[lo..hi].iter_mut().zip(src[first..].iter().step_by(s)) {
                                *d = *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (h, k, s, p) = (g.h as isize, g.k, g.stride, g.pad as isize);
    let plane = g.ho * g.wo;
    for ci in 0..g.cin {
        let xc = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(g, kx);
                if lo >= hi {
                    continue;
                }
                let first = lo * s + kx - g.pad;
                for oy in 0..g.ho {
                    let iy = (oy * s) as isize + ky as isize - p;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let srow = &src[oy * g.wo + lo..oy * g.wo + hi];
                    for (d, v) in dst[first..].iter_mut().step_by(s).zip(srow) {
                        *d += *v;
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
    let plane = g.ho * g.wo;
    let rows = g.col_rows();
    let mut out = vec![T::zero(); g.batch * g.cout * plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * plane]
    };
    for n in 0..g.batch {
        let xs = &x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
        let ys = &mut out[n * g.cout * plane..(n + 1) * g.cout * plane];
        let src: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(g, xs, &mut cols);
            &cols
        };
        T::gemm(false, false, g.cout, rows, plane, T::one(), w, src, T::zero(), ys);
        if let Some(b) = b {
            for (co, ch) in ys.chunks_mut(plane).enumerate() {
                let bv = b[co];
                ch.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    out
}

fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    gy: &[T],
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let plane = g.ho * g.wo;
    let rows = g.col_rows();
    let in_len = g.cin * g.h * g.w;
    let mut dx = need_x.then(|| vec![T::zero(); g.batch * in_len]);
    let mut dw = need_w.then(|| vec![T::zero(); g.cout * rows]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * plane]
    };
    for n in 0..g.batch {
        let xs = &x[n * in_len..(n + 1) * in_len];
        let gys = &gy[n * g.cout * plane..(n + 1) * g.cout * plane];
        if let Some(dw) = dw.as_mut() {
            let src: &[T] = if g.is_pointwise() {
                xs
            } else {
                im2col(g, xs, &mut cols);
                &cols
            };
            let beta = if n == 0 { T::zero() } else { T::one() };
            T::gemm(false, true, g.cout, plane, rows, T::one(), gys, src, beta, dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[n * in_len..(n + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(true, false, rows, g.cout, plane, T::one(), w, gys, T::zero(), dxs);
            } else {
                T::gemm(true, false, rows, g.cout, plane, T::one(), w, gys, T::zero(), &mut cols);
                col2im(g, &cols, dxs);
            }
        }
    }
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(name: &str, shape: &[usize], values: Vec<f64>) -> ParamTree<f64> {
        let mut p = ParamTree::new();
        p.insert(name, Tensor::from_vec(shape, values).unwrap()).unwrap();
        p
    }

    #[test]
    fn square_has_derivative_six_at_three() {
        let p = tree("x", &[1], vec![3.0]);
        let mut g = Graph::new();
        let x = g.param(&p, "x").unwrap();
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y, &p).unwrap();
        assert_eq!(grads["x"].item(), 6.0);
    }

    #[test]
    fn inactive_relu_blocks_gradient() {
        let p = tree("x", &[1], vec![-1.0]);
        let mut g = Graph::new();
        let x = g.param(&p, "x").unwrap();
        let y = g.relu(x);
        let grads = g.backward(y, &p).unwrap();
        assert_eq!(grads["x"].item(), 0.0);
    }

    #[test]
    fn unreachable_parameter_gets_zero_gradient() {
        let mut p = tree("x", &[1], vec![2.0]);
        p.insert("unused", Tensor::full(&[2, 2], 1.0)).unwrap();
        let mut g = Graph::new();
        let x = g.param(&p, "x").unwrap();
        let y = g.scale(x, 4.0);
        let grads = g.backward(y, &p).unwrap();
        assert_eq!(grads["x"].item(), 4.0);
        assert_eq!(grads["unused"], Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let p = tree("x", &[2], vec![1.0, 2.0]);
        let mut g = Graph::new();
        let x = g.param(&p, "x").unwrap();
        assert!(matches!(g.backward(x, &p), Err(Error::Shape { .. })));
    }

    #[test]
    fn non_finite_gradient_names_the_op() {
        let p = tree("c", &[1], vec![0.0]);
        let mut g = Graph::new();
        let c = g.param(&p, "c").unwrap();
        let big = g.constant(Tensor::from_vec(&[1], vec![f64::INFINITY]).unwrap());
        let y = g.mul(big, c).unwrap();
        match g.backward(y, &p) {
            Err(Error::Numeric { op }) => assert_eq!(op, "mul"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn reuse_accumulates_gradients() {
        // y = x + x + x
        let p = tree("x", &[1], vec![1.5]);
        let mut g = Graph::new();
        let x = g.param(&p, "x").unwrap();
        let a = g.add(x, x).unwrap();
        let y = g.add(a, x).unwrap();
        assert_eq!(g.backward(y, &p).unwrap()["x"].item(), 3.0);
    }

    #[test]
    fn permute_round_trips() {
        let t = Tensor::<f64>::from_vec(&[2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let p = permute_tensor(&t, &[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        // p[k, i, j] = t[i, j, k]
        assert_eq!(p.data()[(2 + 1) * 3 + 2], t.data()[(3 + 2) * 4 + 1]);
        assert_eq!(permute_tensor(&p, &[1, 2, 0]), t);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_sigmoid_is_open_interval() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::from_vec(&[2, 3], vec![1e4, -1e4, 0.0, 3.0, 2.0, 1.0]).unwrap());
        let s = g.softmax(x, 1).unwrap();
        for row in g.value(s).data().chunks(3) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        let y = g.sigmoid(x);
        assert!(g.value(y).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn conv_same_padding_keeps_size() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 2, 5, 6], 1.0));
        let w = g.constant(Tensor::full(&[3, 2, 3, 3], 1.0));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 5, 6]);
        // interior sees all 18 taps, a corner sees 2 * 4
        assert_eq!(g.value(y).data()[6 + 1], 18.0);
        assert_eq!(g.value(y).data()[0], 8.0);
        let y2 = g.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(g.shape(y2), &[1, 3, 3, 3]);
    }

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (sx, sw) = (x.shape(), w.shape());
        let (n, ci, h, wd, co, k) = (sx[0], sx[1], sx[2], sx[3], sw[0], sw[2]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; n * co * ho * wo];
        for b in 0..n {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += x.data()[((b * ci + c) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((o * ci + c) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        out[((b * co + o) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Tensor::from_vec(&[n, co, ho, wo], out).unwrap()
    }

    #[test]
    fn conv_matches_naive_loops_and_adjoint() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for &(h, w, k, stride, pad) in &[
            (5, 7, 3, 1, 1),
            (6, 5, 3, 2, 1),
            (7, 7, 3, 2, 0),
            (4, 9, 1, 1, 0),
            (5, 6, 3, 3, 2),
            (3, 3, 3, 1, 2),
        ] {
            let xt = Tensor::randn(&[2, 3, h, w], 1.0, &mut rng);
            let wt = Tensor::randn(&[4, 3, k, k], 1.0, &mut rng);
            let want = naive_conv(&xt, &wt, stride, pad);
            let mut g = Graph::<f64>::new();
            let x = g.leaf(xt.clone());
            let wv = g.constant(wt.clone());
            let y = g.conv2d(x, wv, None, stride, pad).unwrap();
            assert!(g.value(y).max_abs_diff(&want) < 1e-12, "{h}x{w} k{k} s{stride} p{pad}");
            // <conv(x), r> = <x, conv^T(r)>
            let r = Tensor::randn(g.shape(y), 1.0, &mut rng);
            let rv = g.constant(r.clone());
            let prod = g.mul(y, rv).unwrap();
            let loss = g.mean(prod);
            let grads = g.backward_all(loss).unwrap();
            let dx = grads[x.0].as_ref().unwrap();
            let lhs: f64 = want.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>() / r.len() as f64;
            let rhs: f64 = xt.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "adjoint {h}x{w} k{k} s{stride} p{pad}");
        }
    }
}
