//! Adam with coupled L2 weight decay (the decay term is added to the gradient
//! before the moment updates).

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};

use crate::graph::Matrix;
use crate::params::{Gradients, Param, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Matrix,
    v: Matrix,
    t: i32,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    state: BTreeMap<ParamId, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: BTreeMap::new(),
        }
    }

    /// Applies one update to every parameter that has a gradient and passes
    /// `trainable`. Parameters without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, trainable: impl Fn(&Param) -> bool) {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        for (id, grad) in grads.iter() {
            if !trainable(store.get(id)) {
                continue;
            }
            let value = store.value_mut(id);
            let moments = self.state.entry(id).or_insert_with(|| Moments {
                m: Array2::zeros(value.dim()),
                v: Array2::zeros(value.dim()),
                t: 0,
            });
            moments.t += 1;
            let c1 = 1.0 - beta1.powi(moments.t);
            let c2 = 1.0 - beta2.powi(moments.t);
            Zip::from(value)
                .and(grad)
                .and(&mut moments.m)
                .and(&mut moments.v)
                .for_each(|w, &g, m, v| {
                    let g = g + weight_decay * *w;
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::new();
        let x = store.add("x", "g", Array2::from_elem((1, 2), 3.0));
        let mut opt = Adam::new(AdamConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        for _ in 0..500 {
            let mut g = Graph::new();
            let v = g.param(&store, x);
            let sq = g.mul(v, v);
            let loss = g.sum(sq);
            let grads = g.backward(loss);
            opt.step(&mut store, &grads, |_| true);
        }
        assert!(store.value(x).iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut store = ParamStore::new();
        let a = store.add("a", "frozen", Array2::from_elem((1, 1), 1.0));
        let b = store.add("b", "live", Array2::from_elem((1, 1), 1.0));
        let mut opt = Adam::new(AdamConfig::default());
        let mut g = Graph::new();
        let va = g.param(&store, a);
        let vb = g.param(&store, b);
        let s = g.mul(va, vb);
        let loss = g.sum(s);
        let grads = g.backward(loss);
        opt.step(&mut store, &grads, |p| p.group != "frozen");
        assert_eq!(store.value(a)[[0, 0]], 1.0);
        assert!(store.value(b)[[0, 0]] < 1.0);
    }
}
