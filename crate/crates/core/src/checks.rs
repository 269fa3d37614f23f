//! Self-check suites behind `evlight check`: finite-difference gradient
//! checks and the voxelization oracle comparisons.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::eventsim::{voxel_index, voxelize, Event, Polarity};
use crate::netcore::{Model, ModelConfig};
use crate::numgrid::{
    finite_diff_check, finite_diff_check_with, worst_error, FdOptions, Graph, ParamTree, Tensor, Var,
};
use crate::training::{stage1_loss, stage2_loss, RandomConvFeatures};

/// Outcome of one named check.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckOutcome {
    /// Passes only when `value` is exactly zero (a count of mismatches).
    pub fn exact(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance: 0.0,
            passed: value == 0.0,
        }
    }

    pub fn below(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value.is_finite() && value < tolerance,
        }
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {}: {:.3e} (tolerance {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_EPS: f64 = 1e-5;

/// `sum(w * y)` with fixed random weights, so every output element matters.
pub fn probe_loss(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let shape = g.shape(y).to_vec();
    let w = g.constant(Tensor::uniform(&shape, -1.0, 1.0, &mut rng));
    let prod = g.mul(y, w)?;
    let m = g.mean(prod);
    let n = g.value(y).len() as f64;
    Ok(g.scale(m, n))
}

fn random_tree(spec: &[(&str, &[usize])], seed: u64) -> ParamTree<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamTree::new();
    for (name, shape) in spec {
        p.insert(*name, Tensor::uniform(shape, -1.0, 1.0, &mut rng))
            .expect("unique names");
    }
    p
}

/// Inputs bounded away from zero, for checks through kinks (ReLU, |x|, clamp).
fn away_from_zero(p: &mut ParamTree<f64>, name: &str) {
    let t = p.get_mut(name).expect("present");
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v = 0.05_f64.copysign(*v + 1e-300);
        }
    }
}

type Build = Box<dyn Fn(&mut Graph<f64>, &ParamTree<f64>) -> Result<Var>>;

fn primitive_cases() -> Vec<(&'static str, ParamTree<f64>, Build)> {
    let mut cases: Vec<(&'static str, ParamTree<f64>, Build)> = Vec::new();
    macro_rules! case {
        ($name:expr, $spec:expr, |$g:ident, $p:ident| $body:expr) => {{
            let tree = random_tree($spec, cases.len() as u64 + 1);
            let build: Build = Box::new(move |$g: &mut Graph<f64>, $p: &ParamTree<f64>| {
                let y: Var = $body;
                probe_loss($g, y, 7)
            });
            cases.push(($name, tree, build));
        }};
    }

    case!("add", &[("a", &[2, 3]), ("b", &[2, 3])], |g, p| {
        let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
        g.add(a, b)?
    });
    case!("sub", &[("a", &[2, 3]), ("b", &[2, 3])], |g, p| {
        let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
        g.sub(a, b)?
    });
    case!("mul", &[("a", &[2, 3]), ("b", &[2, 3])], |g, p| {
        let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
        g.mul(a, b)?
    });
    case!("scale+add_scalar", &[("a", &[5])], |g, p| {
        let a = g.param(p, "a")?;
        let s = g.scale(a, -2.5);
        g.add_scalar(s, 0.3)
    });
    case!("add_row", &[("x", &[3, 4]), ("b", &[4])], |g, p| {
        let (x, b) = (g.param(p, "x")?, g.param(p, "b")?);
        g.add_row(x, b)?
    });
    case!("matmul", &[("a", &[3, 4]), ("b", &[4, 2])], |g, p| {
        let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
        g.matmul(a, b)?
    });
    case!("matmul_batched", &[("a", &[2, 3, 4]), ("b", &[2, 4, 5])], |g, p| {
        let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
        g.matmul(a, b)?
    });
    case!("matmul_shared_rhs", &[("a", &[2, 3, 4]), ("b", &[4, 5])], |g, p| {
        let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
        g.matmul(a, b)?
    });
    case!(
        "conv2d_3x3_s1",
        &[("x", &[2, 2, 5, 4]), ("w", &[3, 2, 3, 3]), ("b", &[3])],
        |g, p| {
            let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
            g.conv2d(x, w, Some(b), 1, 1)?
        }
    );
    case!(
        "conv2d_3x3_s2",
        &[("x", &[1, 2, 6, 6]), ("w", &[2, 2, 3, 3]), ("b", &[2])],
        |g, p| {
            let (x, w, b) = (g.param(p, "x")?, g.param(p, "w")?, g.param(p, "b")?);
            g.conv2d(x, w, Some(b), 2, 1)?
        }
    );
    case!("conv2d_1x1", &[("x", &[2, 3, 3, 3]), ("w", &[2, 3, 1, 1])], |g, p| {
        let (x, w) = (g.param(p, "x")?, g.param(p, "w")?);
        g.conv2d(x, w, None, 1, 0)?
    });
    case!("upsample_nearest", &[("x", &[1, 2, 3, 2])], |g, p| {
        let x = g.param(p, "x")?;
        g.upsample_nearest(x, 2)?
    });
    case!("upsample_bilinear", &[("x", &[1, 2, 3, 4])], |g, p| {
        let x = g.param(p, "x")?;
        g.upsample_bilinear(x, 7, 9)?
    });
    case!("adaptive_avg_pool_down", &[("x", &[2, 7, 9])], |g, p| {
        let x = g.param(p, "x")?;
        g.adaptive_avg_pool(x, 3, 4)?
    });
    case!("adaptive_avg_pool_up", &[("x", &[2, 3, 2])], |g, p| {
        let x = g.param(p, "x")?;
        g.adaptive_avg_pool(x, 8, 5)?
    });
    {
        let mut tree = random_tree(&[("x", &[3, 5])], 101);
        away_from_zero(&mut tree, "x");
        let build: Build = Box::new(|g, p| {
            let x = g.param(p, "x")?;
            let y = g.relu(x);
            probe_loss(g, y, 7)
        });
        cases.push(("relu", tree, build));
    }
    case!("sigmoid", &[("x", &[3, 5])], |g, p| {
        let x = g.param(p, "x")?;
        let x = g.scale(x, 3.0);
        g.sigmoid(x)
    });
    case!("softmax_last", &[("x", &[2, 3, 4])], |g, p| {
        let x = g.param(p, "x")?;
        g.softmax(x, 2)?
    });
    case!("softmax_middle", &[("x", &[2, 3, 4])], |g, p| {
        let x = g.param(p, "x")?;
        g.softmax(x, 1)?
    });
    case!(
        "layer_norm",
        &[("x", &[4, 6]), ("gamma", &[6]), ("beta", &[6])],
        |g, p| {
            let (x, ga, be) = (g.param(p, "x")?, g.param(p, "gamma")?, g.param(p, "beta")?);
            g.layer_norm(x, ga, be, 1e-5)?
        }
    );
    case!("concat_channels", &[("a", &[2, 1, 3]), ("b", &[2, 2, 3])], |g, p| {
        let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
        g.concat(&[a, b], 1)?
    });
    case!("narrow", &[("x", &[2, 5, 3])], |g, p| {
        let x = g.param(p, "x")?;
        g.narrow(x, 1, 1, 3)?
    });
    case!("reshape+permute", &[("x", &[2, 3, 4])], |g, p| {
        let x = g.param(p, "x")?;
        let r = g.reshape(x, &[6, 4])?;
        let r = g.reshape(r, &[2, 3, 2, 2])?;
        g.permute(r, &[3, 1, 0, 2])?
    });
    {
        let mut tree = random_tree(&[("a", &[4, 3]), ("b", &[4, 3])], 103);
        // keep a - b away from zero so |.| is smooth at every sample
        let b = tree.get("b").unwrap().clone();
        let a = tree.get_mut("a").unwrap();
        for (av, bv) in a.data_mut().iter_mut().zip(b.data()) {
            if (*av - bv).abs() < 0.05 {
                *av += 0.1;
            }
        }
        let build: Build = Box::new(|g, p| {
            let (a, b) = (g.param(p, "a")?, g.param(p, "b")?);
            let d = g.sub(a, b)?;
            let l1 = g.mean_abs(d);
            let m = g.mean(a);
            let s = g.scale(m, 0.5);
            g.add(l1, s)
        });
        cases.push(("mean+mean_abs", tree, build));
    }
    {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let target = Tensor::from_vec(
            &[3, 4],
            (0..12).map(|_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 }).collect(),
        )
        .expect("shape");
        let tree = random_tree(&[("x", &[3, 4])], 105);
        let build: Build = Box::new(move |g, p| {
            let x = g.param(p, "x")?;
            let x = g.scale(x, 2.0);
            let prob = g.sigmoid(x);
            g.bce_mean(prob, &target, 1e-7)
        });
        cases.push(("bce", tree, build));
    }
    {
        let mut tree = random_tree(&[("x", &[4, 4])], 106);
        for v in tree.get_mut("x").unwrap().data_mut() {
            *v = *v * 1.5 + 0.5;
            if (*v).abs() < 0.05 || (*v - 1.0).abs() < 0.05 {
                *v += 0.11;
            }
        }
        let build: Build = Box::new(|g, p| {
            let x = g.param(p, "x")?;
            let y = g.clamp(x, 0.0, 1.0);
            probe_loss(g, y, 7)
        });
        cases.push(("clamp", tree, build));
    }
    {
        // three conv + sigmoid stages on a 4x4 input
        let tree = random_tree(
            &[
                ("x", &[1, 2, 4, 4]),
                ("c1.w", &[3, 2, 3, 3]),
                ("c1.b", &[3]),
                ("c2.w", &[3, 3, 3, 3]),
                ("c2.b", &[3]),
                ("c3.w", &[1, 3, 3, 3]),
                ("c3.b", &[1]),
            ],
            107,
        );
        let build: Build = Box::new(|g, p| {
            let mut h = g.param(p, "x")?;
            for layer in ["c1", "c2", "c3"] {
                let w = g.param(p, &format!("{layer}.w"))?;
                let b = g.param(p, &format!("{layer}.b"))?;
                let c = g.conv2d(h, w, Some(b), 1, 1)?;
                h = g.sigmoid(c);
            }
            probe_loss(g, h, 7)
        });
        cases.push(("conv_sigmoid_chain", tree, build));
    }
    cases
}

/// Finite-difference check of every differentiable primitive.
pub fn primitive_grad_suite() -> Result<Vec<CheckOutcome>> {
    primitive_cases()
        .into_iter()
        .map(|(name, tree, build)| {
            let report = finite_diff_check(build, &tree, FD_EPS)?;
            Ok(CheckOutcome::below(
                format!("grad/{name}"),
                worst_error(&report),
                GRAD_TOLERANCE,
            ))
        })
        .collect()
}

/// Denominator floor of the whole-network check. A key bias shifts every
/// score of a query equally, so its exact gradient is zero and only roundoff
/// would remain to be compared.
pub const MODEL_GRAD_FLOOR: f64 = 1e-3;

/// Configuration of the whole-network gradient check.
pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        channels: 2,
        heads: 2,
        frames: 2,
        ..ModelConfig::default()
    }
}

/// Finite-difference check of the enhancement network on a batch of two
/// 8x8 frames, covering every parameter and the dark-frame input.
pub fn model_grad_check() -> Result<CheckOutcome> {
    let cfg = small_model_config();
    let model = Model::new(&cfg)?;
    let (n, h, w) = (2, 8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut tree = ParamTree::new();
    // wider than the training init so every path carries signal
    for (name, t) in model.init_enhancement::<f64>(5)?.iter() {
        tree.insert(name.clone(), Tensor::uniform(t.shape(), -0.5, 0.5, &mut rng))?;
    }
    tree.insert("input.low", Tensor::uniform(&[n, 3, h, w], 0.0, 1.0, &mut rng))?;
    let restored = Tensor::uniform(&[n, cfg.voxel_channels(), h, w], 0.0, 1.2, &mut rng);
    let mask = model.guidance_masks(&restored)?;
    let build = |g: &mut Graph<f64>, p: &ParamTree<f64>| -> Result<Var> {
        let low = g.param(p, "input.low")?;
        let er = g.constant(restored.clone());
        let y = model.enhancement.forward(g, p, low, er, Some(&mask))?;
        probe_loss(g, y, 11)
    };
    let report = finite_diff_check_with(
        build,
        &tree,
        FdOptions {
            eps: FD_EPS,
            max_elements: 12,
            seed: 4,
            floor: MODEL_GRAD_FLOOR,
        },
    )?;
    let (worst_name, worst) = report.iter().fold(
        ("", 0.0f64),
        |acc, (k, &v)| if v > acc.1 { (k.as_str(), v) } else { acc },
    );
    Ok(CheckOutcome::below(
        format!("grad/enhance_model (C=2, 8x8, N=2; worst {worst_name})"),
        worst,
        GRAD_TOLERANCE,
    ))
}

/// Both stage losses differentiated with respect to their network outputs.
pub fn loss_grad_checks() -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut t1 = ParamTree::<f64>::new();
    t1.insert("prob", Tensor::uniform(&[6, 4, 4], 0.05, 0.95, &mut rng))?;
    t1.insert("voxels", Tensor::uniform(&[6, 4, 4], 0.0, 1.0, &mut rng))?;
    let target: Tensor<f64> = Tensor::uniform(&[6, 4, 4], 0.0, 0.3, &mut rng);
    // keep |voxels - target| away from the L1 kink
    for (v, t) in t1
        .get_mut("voxels")
        .expect("inserted")
        .data_mut()
        .iter_mut()
        .zip(target.data())
    {
        if (*v - t).abs() < 0.02 {
            *v = t + 0.05;
        }
    }
    let s1 = |g: &mut Graph<f64>, p: &ParamTree<f64>| -> Result<Var> {
        let prob = g.param(p, "prob")?;
        let v = g.param(p, "voxels")?;
        Ok(stage1_loss(g, prob, v, &target, 0.7)?.total)
    };
    let r1 = finite_diff_check(s1, &t1, FD_EPS)?;

    let mut t2 = ParamTree::<f64>::new();
    t2.insert("pred", Tensor::uniform(&[1, 3, 9, 9], 0.0, 1.0, &mut rng))?;
    let gt = Tensor::uniform(&[1, 3, 9, 9], 0.0, 1.0, &mut rng);
    let ex = RandomConvFeatures::<f64>::default();
    let s2 = |g: &mut Graph<f64>, p: &ParamTree<f64>| -> Result<Var> {
        let pred = g.param(p, "pred")?;
        Ok(stage2_loss(g, pred, &gt, 0.5, &ex)?.total)
    };
    let r2 = finite_diff_check(s2, &t2, FD_EPS)?;
    Ok(vec![
        CheckOutcome::below("grad/stage1_loss", worst_error(&r1), GRAD_TOLERANCE),
        CheckOutcome::below("grad/stage2_loss", worst_error(&r2), GRAD_TOLERANCE),
    ])
}

/// Primitive and loss checks followed by the whole-network check.
pub fn grad_suite() -> Result<Vec<CheckOutcome>> {
    let mut out = primitive_grad_suite()?;
    out.extend(loss_grad_checks()?);
    out.push(model_grad_check()?);
    Ok(out)
}

/// A random event stream with its grid geometry.
#[derive(Clone, Debug)]
pub struct RandomStream {
    pub events: Vec<Event>,
    pub bins: usize,
    pub height: usize,
    pub width: usize,
    pub t0: f64,
    pub tn: f64,
}

/// Up to `max_events` events on a grid of at most 12x12 with 2 to 5 bins;
/// about one event in ten sits exactly on `t0` or `tn`.
pub fn random_stream<R: Rng + ?Sized>(rng: &mut R, max_events: usize) -> RandomStream {
    let bins = rng.gen_range(2..=5);
    let height = rng.gen_range(1..=12);
    let width = rng.gen_range(1..=12);
    let t0 = rng.gen_range(-4i32..4) as f64 * 0.5;
    let tn = t0 + rng.gen_range(1..=16) as f64 * 0.25;
    let count = rng.gen_range(0..=max_events);
    let events = (0..count)
        .map(|_| {
            let t = match rng.gen_range(0..20) {
                0 => t0 as f32,
                1 => tn as f32,
                _ => rng.gen_range(t0 as f32..=tn as f32),
            };
            Event {
                x: rng.gen_range(0..width) as u16,
                y: rng.gen_range(0..height) as u16,
                t,
                channel: rng.gen_range(0..3),
                polarity: if rng.gen_bool(0.5) {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                },
            }
        })
        .collect();
    RandomStream {
        events,
        bins,
        height,
        width,
        t0,
        tn,
    }
}

/// Per-event, per-bin accumulation of `max(0, 1 - |k - pos|)`, visiting
/// every bin.
pub fn naive_voxels(s: &RandomStream) -> Vec<f64> {
    let plane = s.height * s.width;
    let mut grid = vec![0.0f64; 2 * s.bins * 3 * plane];
    for e in &s.events {
        let pos = (e.t as f64 - s.t0) / (s.tn - s.t0) * (s.bins - 1) as f64;
        for k in 0..s.bins {
            let w = (1.0 - (k as f64 - pos).abs()).max(0.0);
            let ch = voxel_index(e.polarity.group(), k, e.channel as usize, s.bins);
            grid[ch * plane + e.y as usize * s.width + e.x as usize] += w;
        }
    }
    grid
}

fn grid_of(s: &RandomStream, events: &[Event]) -> Result<Vec<f64>> {
    Ok(voxelize(events, s.bins, s.height, s.width, s.t0, s.tn)?
        .values
        .into_data())
}

/// Oracle agreement, mass conservation and linearity over `streams` random
/// streams of at most 500 events.
pub fn voxel_suite(streams: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mismatches, mut mass_err, mut lin_err) = (0usize, 0.0f64, 0.0f64);
    for _ in 0..streams {
        let s = random_stream(&mut rng, 500);
        let grid = grid_of(&s, &s.events)?;
        let oracle = naive_voxels(&s);
        if grid.iter().zip(&oracle).any(|(a, b)| a.to_bits() != b.to_bits()) {
            mismatches += 1;
        }
        let total: f64 = grid.iter().sum();
        mass_err = mass_err.max((total - s.events.len() as f64).abs());
        if let Some(e) = s.events.first() {
            let single: f64 = grid_of(&s, std::slice::from_ref(e))?.iter().sum();
            mass_err = mass_err.max((single - 1.0).abs());
        }
        let split = rng.gen_range(0..=s.events.len());
        let (a, b) = s.events.split_at(split);
        let (ga, gb) = (grid_of(&s, a)?, grid_of(&s, b)?);
        for ((x, y), z) in ga.iter().zip(&gb).zip(&grid) {
            lin_err = lin_err.max((x + y - z).abs());
        }
    }
    Ok(vec![
        CheckOutcome::exact(
            format!("voxel/oracle ({streams} streams, mismatching streams)"),
            mismatches as f64,
        ),
        CheckOutcome::below("voxel/mass_conservation", mass_err, 1e-9),
        CheckOutcome::below("voxel/linearity", lin_err, 1e-9),
    ])
}
