use std::collections::BTreeMap;

use serde::Serialize;

use super::{batch_loss, Model};
use crate::dste::ModalInputs;
use crate::error::Result;
use crate::kinks;
use crate::mgfd::{loss_total, BnMode, LossWeights};
use crate::parallel::Exec;
use crate::params::ParamStore;
use crate::tensor::Mat;

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Per-array part of a [`GradCheckReport`].
#[derive(Clone, Debug, Default, Serialize)]
pub struct ArrayCheck {
    pub max_rel_err: f64,
    /// Entries compared.
    pub checked: usize,
    /// Entries whose difference quotient straddled a kink.
    pub straddled: usize,
}

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    /// Largest relative error over all compared entries.
    pub max_rel_err: f64,
    /// Parameter array holding the worst entry.
    pub worst: String,
    /// Entries compared.
    pub checked: usize,
    /// Entries skipped because `x - h` or `x + h` took a different branch of
    /// some ReLU, max or hinge than `x` did.
    pub straddled: usize,
    pub per_param: BTreeMap<String, ArrayCheck>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Loss value of one batch without gradients, with the digest of its branch
/// decisions.
pub(crate) fn loss_value(model: &Model, store: &ParamStore, copies: &[Vec<ModalInputs>], weights: &LossWeights) -> Result<(f64, u64)> {
    let c = model.encoder.config().repr_dim;
    let (total, digest) = kinks::trace(|| -> Result<f64> {
        let mut sets = Vec::with_capacity(copies.len());
        for copy in copies {
            let rows: Vec<Vec<f64>> = copy.iter().map(|x| model.encoder.embed_instance(store, x)).collect::<Result<_>>()?;
            let h = Mat::from_rows(&rows);
            let (h_t, h_s) = (h.slice_cols(0, c), h.slice_cols(c, c));
            sets.push(model.projectors.project(store, &h_t, &h_s, BnMode::Train)?);
        }
        Ok(loss_total(&sets, weights)?.total)
    });
    Ok((total?, digest))
}

/// Compares the analytic gradient of the total loss with central
/// differences of step `h` on up to `per_array` evenly spaced entries of
/// every trainable array. Entries where both values are below `floor` in
/// magnitude are not compared, nor are entries whose perturbation crosses a
/// kink (counted in `straddled`).
pub fn finite_diff_check(
    model: &Model,
    store: &ParamStore,
    copies: &[Vec<ModalInputs>],
    weights: &LossWeights,
    h: f64,
    per_array: usize,
    floor: f64,
) -> Result<GradCheckReport> {
    let eval = batch_loss(model, store, copies, weights, Exec::Sequential)?;
    let (_, base) = loss_value(model, store, copies, weights)?;
    let mut work = store.clone();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: String::new(), checked: 0, straddled: 0, per_param: BTreeMap::new() };
    let ids: Vec<_> = store.trainable_ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let stride = n.div_ceil(per_array.max(1)).max(1);
        let mut entry = ArrayCheck::default();
        for k in (0..n).step_by(stride) {
            let orig = store.get(id).as_slice()[k];
            work.get_mut(id).as_mut_slice()[k] = orig + h;
            let (up, d_up) = loss_value(model, &work, copies, weights)?;
            work.get_mut(id).as_mut_slice()[k] = orig - h;
            let (down, d_down) = loss_value(model, &work, copies, weights)?;
            work.get_mut(id).as_mut_slice()[k] = orig;
            if d_up != base || d_down != base {
                entry.straddled += 1;
                continue;
            }
            let fd = (up - down) / (2.0 * h);
            let an = eval.grads.get(id).map_or(0.0, |g| g.as_slice()[k]);
            let scale = fd.abs().max(an.abs());
            if scale > floor {
                entry.checked += 1;
                entry.max_rel_err = entry.max_rel_err.max((fd - an).abs() / scale);
            }
        }
        let name = store.name(id).to_string();
        if entry.max_rel_err > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = entry.max_rel_err;
            report.worst = name.clone();
        }
        report.checked += entry.checked;
        report.straddled += entry.straddled;
        report.per_param.insert(name, entry);
    }
    Ok(report)
}
