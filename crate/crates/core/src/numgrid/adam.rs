use std::collections::BTreeMap;

use super::{Gradients, ParamTree, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates and step count for [`adam_step`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.m.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.v.get(name)
    }
}

/// One bias-corrected Adam update of every non-frozen parameter.
pub fn adam_step<T: Real>(params: &mut ParamTree<T>, grads: &Gradients<T>, state: &mut AdamState<T>) -> Result<()> {
    // validate before touching anything so a failed step leaves no partial update
    for (name, p) in params.iter() {
        if params.is_frozen(name) {
            continue;
        }
        let g = grads
            .get(name)
            .ok_or_else(|| Error::pre(format!("no gradient for parameter {name}")))?;
        if g.shape() != p.shape() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "parameter {name} is {:?} but its gradient is {:?}",
                    p.shape(),
                    g.shape()
                ),
            ));
        }
        for moments in [&state.m, &state.v] {
            if let Some(m) = moments.get(name) {
                if m.shape() != p.shape() {
                    return Err(Error::shape(
                        "adam_step",
                        format!("parameter {name} is {:?} but its moment is {:?}", p.shape(), m.shape()),
                    ));
                }
            }
        }
    }

    state.t += 1;
    let c = state.config;
    let t = state.t as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
    let step = T::c(c.lr / bc1);
    let inv_bc2 = T::c(1.0 / bc2);
    let eps = T::c(c.eps);

    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        if params.is_frozen(&name) {
            continue;
        }
        let g = &grads[&name];
        let p = params.get_mut(&name).expect("listed name");
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (T::one() - b1) * gv;
            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            *pv -= step * *mv / ((*vv * inv_bc2).sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(w: f64) -> ParamTree<f64> {
        let mut p = ParamTree::new();
        p.insert("w", Tensor::from_vec(&[1], vec![w]).unwrap()).unwrap();
        p
    }

    fn grad(g: f64) -> Gradients<f64> {
        let mut m = Gradients::new();
        m.insert("w".to_string(), Tensor::from_vec(&[1], vec![g]).unwrap());
        m
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1, so w = -0.1 * 1 / (1 + 1e-8)
        let mut p = single(0.0);
        let mut s = AdamState::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        adam_step(&mut p, &grad(1.0), &mut s).unwrap();
        let w = p.get("w").unwrap().item();
        assert!((w + 0.1).abs() < 1e-6, "{w}");
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = single(0.7);
        let mut s = AdamState::new(AdamConfig::default());
        for _ in 0..3 {
            adam_step(&mut p, &grad(0.0), &mut s).unwrap();
        }
        assert_eq!(p.get("w").unwrap().item(), 0.7);
        assert_eq!(s.t, 3);
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let mut p = single(0.7);
        p.freeze("w").unwrap();
        let mut s = AdamState::new(AdamConfig::default());
        adam_step(&mut p, &grad(5.0), &mut s).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 0.7);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn shape_mismatch_names_parameter() {
        let mut p = single(0.0);
        let mut g = Gradients::new();
        g.insert("w".to_string(), Tensor::zeros(&[2]));
        let mut s = AdamState::new(AdamConfig::default());
        let err = adam_step(&mut p, &g, &mut s).unwrap_err().to_string();
        assert!(err.contains("parameter w"), "{err}");
        assert_eq!(s.t, 0);
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut p = single(0.0);
        let mut s = AdamState::new(AdamConfig::default());
        assert!(adam_step(&mut p, &Gradients::new(), &mut s).is_err());
    }
}
