use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{Grads, ParamStore};
use crate::tensor::Mat;

/// Adam with classic (coupled, L2) weight decay: `g ← g + wd·θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Steps taken so far.
    pub t: u64,
    m: Vec<Option<Mat>>,
    v: Vec<Option<Mat>>,
}

impl Adam {
    pub fn new(store: &ParamStore, weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, t: 0, m: vec![None; store.len()], v: vec![None; store.len()] }
    }

    /// One update of every trainable parameter. A parameter without a
    /// gradient is left alone unless weight decay is on.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.trainable_ids().collect();
        for id in ids {
            let g = grads.get(id);
            if g.is_none() && self.weight_decay == 0.0 && self.m[id.index()].is_none() {
                continue;
            }
            let theta = store.get_mut(id);
            let (rows, cols) = theta.shape();
            let m = self.m[id.index()].get_or_insert_with(|| Mat::zeros(rows, cols));
            let v = self.v[id.index()].get_or_insert_with(|| Mat::zeros(rows, cols));
            let zero = [];
            let gs = g.map_or(&zero[..], |g| g.as_slice());
            for k in 0..theta.len() {
                let p = theta.as_slice()[k];
                let gk = gs.get(k).copied().unwrap_or(0.0) + self.weight_decay * p;
                let mk = self.beta1 * m.as_slice()[k] + (1.0 - self.beta1) * gk;
                let vk = self.beta2 * v.as_slice()[k] + (1.0 - self.beta2) * gk * gk;
                m.as_mut_slice()[k] = mk;
                v.as_mut_slice()[k] = vk;
                theta.as_mut_slice()[k] = p - lr * (mk / c1) / ((vk / c2).sqrt() + self.eps);
            }
        }
    }

    /// Moment arrays as `opt/m/<name>` and `opt/v/<name>`.
    pub fn to_arrays(&self, store: &ParamStore) -> BTreeMap<String, Mat> {
        let mut out = BTreeMap::new();
        for id in store.trainable_ids() {
            if let (Some(m), Some(v)) = (&self.m[id.index()], &self.v[id.index()]) {
                out.insert(format!("opt/m/{}", store.name(id)), m.clone());
                out.insert(format!("opt/v/{}", store.name(id)), v.clone());
            }
        }
        out
    }

    /// Restores moments saved by [`Adam::to_arrays`].
    pub fn load_arrays(&mut self, store: &ParamStore, arrays: &BTreeMap<String, Mat>, t: u64) -> Result<()> {
        self.t = t;
        for id in store.trainable_ids() {
            let name = store.name(id);
            let shape = store.get(id).shape();
            for (prefix, slot) in [("opt/m/", &mut self.m), ("opt/v/", &mut self.v)] {
                slot[id.index()] = match arrays.get(&format!("{prefix}{name}")) {
                    Some(a) if a.shape() == shape => Some(a.clone()),
                    Some(a) => return Err(Error::Shape(format!("optimizer state {prefix}{name} is {:?}, parameter is {shape:?}", a.shape()))),
                    None => None,
                };
            }
        }
        Ok(())
    }
}
