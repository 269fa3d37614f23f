//! Parameterised building blocks shared by every network.

use rand::Rng;

use crate::error::Result;
use crate::numgrid::{Graph, ParamTree, Real, Tensor, Var};

/// Standard deviation of the Gaussian weight initialisation.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Fresh parameters for `specs`, drawn in spec order.
pub fn init_params<T: Real, R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> Result<ParamTree<T>> {
    let mut tree = ParamTree::new();
    for s in specs {
        let t = match s.init {
            Init::Normal(std) => Tensor::randn(&s.shape, std, rng),
            Init::Zeros => Tensor::zeros(&s.shape),
            Init::Ones => Tensor::full(&s.shape, T::one()),
        };
        tree.insert(s.name.clone(), t)?;
    }
    Ok(tree)
}

/// Check that `tree` holds every spec'd parameter with the right shape.
pub fn check_params<T: Real>(specs: &[ParamSpec], tree: &ParamTree<T>) -> Result<()> {
    for s in specs {
        match tree.get(&s.name) {
            None => return Err(crate::Error::pre(format!("missing parameter {}", s.name))),
            Some(t) if t.shape() != s.shape.as_slice() => {
                return Err(crate::Error::shape(
                    "parameters",
                    format!("{} is {:?}, expected {:?}", s.name, t.shape(), s.shape),
                ))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Square convolution with "same" zero padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            kernel,
            stride,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec {
            name: format!("{}.weight", self.name),
            shape: vec![self.cout, self.cin, self.kernel, self.kernel],
            init: Init::Normal(INIT_STD),
        });
        out.push(ParamSpec {
            name: format!("{}.bias", self.name),
            shape: vec![self.cout],
            init: Init::Zeros,
        });
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, x: Var) -> Result<Var> {
        let w = g.param(p, &format!("{}.weight", self.name))?;
        let b = g.param(p, &format!("{}.bias", self.name))?;
        g.conv2d(x, w, Some(b), self.stride, self.kernel / 2)
    }
}

/// `x + conv(relu(conv(x)))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub first: Conv,
    pub second: Conv,
}

impl ResBlock {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            first: Conv::new(format!("{name}.conv1"), channels, channels, 3, 1),
            second: Conv::new(format!("{name}.conv2"), channels, channels, 3, 1),
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        self.first.specs(out);
        self.second.specs(out);
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, x: Var) -> Result<Var> {
        let h = self.first.forward(g, p, x)?;
        let h = g.relu(h);
        let h = self.second.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// Affine map on the trailing axis; weight is stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, din: usize, dout: usize) -> Self {
        Self {
            name: name.into(),
            din,
            dout,
        }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec {
            name: format!("{}.weight", self.name),
            shape: vec![self.din, self.dout],
            init: Init::Normal(INIT_STD),
        });
        out.push(ParamSpec {
            name: format!("{}.bias", self.name),
            shape: vec![self.dout],
            init: Init::Zeros,
        });
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let rows = g.value(x).len() / self.din;
        let w = g.param(p, &format!("{}.weight", self.name))?;
        let b = g.param(p, &format!("{}.bias", self.name))?;
        let flat = g.reshape(x, &[rows, self.din])?;
        let y = g.matmul(flat, w)?;
        let y = g.add_row(y, b)?;
        let mut out_shape = shape;
        *out_shape.last_mut().expect("non-scalar") = self.dout;
        g.reshape(y, &out_shape)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim }
    }

    pub fn specs(&self, out: &mut Vec<ParamSpec>) {
        out.push(ParamSpec {
            name: format!("{}.gamma", self.name),
            shape: vec![self.dim],
            init: Init::Ones,
        });
        out.push(ParamSpec {
            name: format!("{}.beta", self.name),
            shape: vec![self.dim],
            init: Init::Zeros,
        });
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &ParamTree<T>, x: Var) -> Result<Var> {
        let gamma = g.param(p, &format!("{}.gamma", self.name))?;
        let beta = g.param(p, &format!("{}.beta", self.name))?;
        g.layer_norm(x, gamma, beta, Self::EPS)
    }
}
