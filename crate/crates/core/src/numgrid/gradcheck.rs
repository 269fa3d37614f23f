use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamTree, Var};
use crate::error::{Error, Result};

/// Settings for [`finite_diff_check_with`].
#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    pub eps: f64,
    /// Parameters with more elements than this are checked on a random
    /// sample of this many elements.
    pub max_elements: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// structurally zero compare absolutely instead of as ratios of roundoff.
    pub floor: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_elements: 32,
            seed: 0,
            floor: 1e-12,
        }
    }
}

/// Worst relative error between recorded gradients and central differences,
/// per parameter. Uses [`FdOptions::default`] apart from `eps`.
pub fn finite_diff_check<F>(f: F, params: &ParamTree<f64>, eps: f64) -> Result<BTreeMap<String, f64>>
where
    F: Fn(&mut Graph<f64>, &ParamTree<f64>) -> Result<Var>,
{
    finite_diff_check_with(
        f,
        params,
        FdOptions {
            eps,
            ..FdOptions::default()
        },
    )
}

pub fn finite_diff_check_with<F>(f: F, params: &ParamTree<f64>, opts: FdOptions) -> Result<BTreeMap<String, f64>>
where
    F: Fn(&mut Graph<f64>, &ParamTree<f64>) -> Result<Var>,
{
    if !(opts.eps > 0.0) {
        return Err(Error::pre(format!(
            "finite-difference step must be positive, got {}",
            opts.eps
        )));
    }
    let mut g = Graph::new();
    let loss = f(&mut g, params)?;
    let grads = g.backward(loss, params)?;

    let eval = |p: &ParamTree<f64>, name: &str| -> Result<f64> {
        let mut g = Graph::new();
        let l = f(&mut g, p).map_err(|e| Error::Param {
            name: name.to_string(),
            source: Box::new(e),
        })?;
        Ok(g.value(l).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut out = BTreeMap::new();
    for (name, t) in params.iter() {
        if params.is_frozen(name) {
            continue;
        }
        let n = t.len();
        let idx: Vec<usize> = if n <= opts.max_elements {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, opts.max_elements).into_vec();
            v.sort_unstable();
            v
        };
        let mut worst = 0.0f64;
        for i in idx {
            let orig = t.data()[i];
            work.get_mut(name).expect("same names").data_mut()[i] = orig + opts.eps;
            let up = eval(&work, name)?;
            work.get_mut(name).expect("same names").data_mut()[i] = orig - opts.eps;
            let down = eval(&work, name)?;
            work.get_mut(name).expect("same names").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            let analytic = grads[name].data()[i];
            let denom = numeric.abs().max(analytic.abs()).max(opts.floor);
            worst = worst.max((numeric - analytic).abs() / denom);
        }
        out.insert(name.clone(), worst);
    }
    Ok(out)
}

/// Largest entry of a [`finite_diff_check`] report.
pub fn worst_error(report: &BTreeMap<String, f64>) -> f64 {
    report.values().copied().fold(0.0, f64::max)
}
