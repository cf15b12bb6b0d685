use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::params::{Grads, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 coefficient; `weight_decay * w` is added to the gradient of every
    /// decaying parameter before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-7, weight_decay: 1e-3 }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments<S> {
    m: Vec<S>,
    v: Vec<S>,
    t: u64,
}

/// First/second moment estimates per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState<S> {
    slots: Vec<Option<Moments<S>>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(store: &ParamStore<S>) -> Self {
        Self { slots: vec![None; store.len()] }
    }

    /// Update count of parameter `index`.
    pub fn steps(&self, index: usize) -> u64 {
        self.slots.get(index).and_then(|s| s.as_ref()).map_or(0, |m| m.t)
    }
}

/// One bias-corrected Adam update. Frozen parameters and parameters without
/// a gradient are left untouched, including their decay term.
pub fn adam_step<S: Scalar>(store: &mut ParamStore<S>, grads: &Grads<S>, state: &mut AdamState<S>, cfg: &AdamConfig) {
    if state.slots.len() < store.len() {
        state.slots.resize(store.len(), None);
    }
    let (lr, b1, b2, eps, wd) = (S::lit(cfg.lr), S::lit(cfg.beta1), S::lit(cfg.beta2), S::lit(cfg.eps), S::lit(cfg.weight_decay));
    let one = S::one();
    for id in store.ids().collect::<Vec<_>>() {
        let Some(g) = grads.get(id) else { continue };
        let entry = store.entry_mut(id);
        if entry.frozen {
            continue;
        }
        let n = g.len();
        let mom = state.slots[id.index()].get_or_insert_with(|| Moments { m: vec![S::zero(); n], v: vec![S::zero(); n], t: 0 });
        mom.t += 1;
        let t = mom.t as i32;
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let decay = entry.decay;
        let w = entry.value.data_mut();
        for k in 0..n {
            let mut gk = g[k];
            if decay {
                gk += wd * w[k];
            }
            mom.m[k] = b1 * mom.m[k] + (one - b1) * gk;
            mom.v[k] = b2 * mom.v[k] + (one - b2) * gk * gk;
            let mhat = mom.m[k] / c1;
            let vhat = mom.v[k] / c2;
            w[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}
