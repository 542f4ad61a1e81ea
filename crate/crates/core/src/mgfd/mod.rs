//! Multi-grained feature decorrelation: projector heads and the
//! consistency/separability objective applied in the instance, spatial and
//! temporal domains.

mod projector;
pub mod terms;

pub use projector::{BnMode, ProjectedVars, Projector, ProjectorStats, Projectors};
pub use terms::{covariance, cross_correlation, loss_con, term_autocov, term_variance, term_xcorr};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Weights of the objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Weight of the spatial and temporal domains relative to the instance domain.
    pub tau: f64,
    /// Distance-to-centroid weight in the consistency loss.
    pub kappa: f64,
    /// Cosine-alignment weight in the consistency loss.
    pub eta: f64,
    /// Target standard deviation of each dimension.
    pub gamma: f64,
    pub epsilon: f64,
    pub mu: f64,
    pub lambda: f64,
    /// Weight of the auto-covariance term; 0 removes it.
    pub autocov: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { tau: 0.5, kappa: 5.0, eta: 5e-4, gamma: 1.0, epsilon: 1e-4, mu: 1.0, lambda: 1e-3, autocov: 1.0 }
    }
}

impl LossWeights {
    /// Consistency only: variance, auto-covariance and cross-correlation off.
    pub fn consistency_only(&self) -> Self {
        Self { mu: 0.0, lambda: 0.0, autocov: 0.0, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("tau", self.tau),
            ("kappa", self.kappa),
            ("eta", self.eta),
            ("gamma", self.gamma),
            ("epsilon", self.epsilon),
            ("mu", self.mu),
            ("lambda", self.lambda),
            ("autocov", self.autocov),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("loss weight {name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("loss weight epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Projections of one batch copy in all three domains.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionSet {
    /// `[N][C_p]`.
    pub z_t: Mat,
    /// `[N][C_p]`.
    pub z_s: Mat,
    /// `[N][2·C_p]`.
    pub z: Mat,
}

/// Unweighted term sums of one domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FdTerms {
    pub con: f64,
    /// `Σ_a V(Z_a)`.
    pub var: f64,
    /// `Σ_a AC(Z_a)`.
    pub autocov: f64,
    /// `Σ_{a<b} XC(Z_a, Z_b)`.
    pub xcorr: f64,
}

impl FdTerms {
    pub fn sep(&self, w: &LossWeights) -> f64 {
        w.mu * self.var + w.autocov * self.autocov + w.lambda * self.xcorr
    }

    pub fn fd(&self, w: &LossWeights) -> f64 {
        self.con + self.sep(w)
    }

    fn add_scaled(&mut self, s: f64, o: &FdTerms) {
        self.con += s * o.con;
        self.var += s * o.var;
        self.autocov += s * o.autocov;
        self.xcorr += s * o.xcorr;
    }
}

/// Value of the full objective and its parts.
///
/// `con`, `var`, `autocov` and `xcorr` are domain-weighted sums
/// (instance + τ·spatial + τ·temporal), so
/// `total = con + μ·var + autocov_weight·autocov + λ·xcorr`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub fd_instance: f64,
    pub fd_spatial: f64,
    pub fd_temporal: f64,
    pub con: f64,
    pub var: f64,
    pub autocov: f64,
    pub xcorr: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.fd_instance, self.fd_spatial, self.fd_temporal, self.con, self.var, self.autocov, self.xcorr].iter().all(|v| v.is_finite())
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("total", self.total),
            ("fd_instance", self.fd_instance),
            ("fd_spatial", self.fd_spatial),
            ("fd_temporal", self.fd_temporal),
            ("con", self.con),
            ("var", self.var),
            ("autocov", self.autocov),
            ("xcorr", self.xcorr),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// `Σ_a [μ·V(Z_a) + AC(Z_a) + λ·Σ_{b>a} XC(Z_a, Z_b)]`, with the
/// auto-covariance weighted by `w.autocov`.
pub fn loss_sep(zs: &[&Mat], w: &LossWeights) -> Result<f64> {
    Ok(sep_terms(zs, w, false)?.0.sep(w))
}

/// Consistency plus separability on one domain.
pub fn loss_fd(zs: &[&Mat], w: &LossWeights) -> Result<f64> {
    Ok(fd_terms(zs, w)?.fd(w))
}

pub fn fd_terms(zs: &[&Mat], w: &LossWeights) -> Result<FdTerms> {
    Ok(fd_grad(zs, w, false)?.0)
}

/// Term sums and, when `grad` is set, the gradient of
/// `sep(w)` with respect to each copy.
fn sep_terms(zs: &[&Mat], w: &LossWeights, grad: bool) -> Result<(FdTerms, Vec<Mat>)> {
    if zs.is_empty() {
        return Err(Error::Config("separability needs at least one copy".into()));
    }
    let mut t = FdTerms::default();
    let mut grads: Vec<Mat> = if grad { zs.iter().map(|z| Mat::zeros(z.rows(), z.cols())).collect() } else { Vec::new() };
    for (a, z) in zs.iter().enumerate() {
        let (v, gv) = terms::variance_grad(z, w.gamma, w.epsilon)?;
        let (ac, gac) = terms::autocov_grad(z)?;
        t.var += v;
        t.autocov += ac;
        if grad {
            grads[a].scaled_add_assign(w.mu, &gv);
            grads[a].scaled_add_assign(w.autocov, &gac);
        }
        for b in a + 1..zs.len() {
            let (xc, ga, gb) = terms::xcorr_grad(z, zs[b])?;
            t.xcorr += xc;
            if grad {
                grads[a].scaled_add_assign(w.lambda, &ga);
                grads[b].scaled_add_assign(w.lambda, &gb);
            }
        }
    }
    Ok((t, grads))
}

/// Term sums of one domain and the gradient of its weighted value
/// with respect to every copy (empty unless `grad`).
pub fn fd_grad(zs: &[&Mat], w: &LossWeights, grad: bool) -> Result<(FdTerms, Vec<Mat>)> {
    let (con, gcon) = terms::con_grad(zs, w.kappa, w.eta)?;
    let (mut t, mut grads) = sep_terms(zs, w, grad)?;
    t.con = con;
    if grad {
        for (g, c) in grads.iter_mut().zip(&gcon) {
            g.add_assign(c);
        }
    }
    Ok((t, grads))
}

/// Gradients of the total objective with respect to each projection.
#[derive(Clone, Debug)]
pub struct ProjectionGrads {
    pub z_t: Mat,
    pub z_s: Mat,
    pub z: Mat,
}

/// `L_fd(instance) + τ·(L_fd(spatial) + L_fd(temporal))`.
pub fn loss_total(sets: &[ProjectionSet], w: &LossWeights) -> Result<LossBreakdown> {
    Ok(total_grad(sets, w, false)?.0)
}

/// The objective and, when `grad` is set, its gradient with respect to every
/// projection of every copy.
pub fn total_grad(sets: &[ProjectionSet], w: &LossWeights, grad: bool) -> Result<(LossBreakdown, Vec<ProjectionGrads>)> {
    let zi: Vec<&Mat> = sets.iter().map(|s| &s.z).collect();
    let zsp: Vec<&Mat> = sets.iter().map(|s| &s.z_s).collect();
    let zt: Vec<&Mat> = sets.iter().map(|s| &s.z_t).collect();
    let (ti, gi) = fd_grad(&zi, w, grad)?;
    let (ts, gs) = fd_grad(&zsp, w, grad)?;
    let (tt, gt) = fd_grad(&zt, w, grad)?;
    let (fi, fs, ft) = (ti.fd(w), ts.fd(w), tt.fd(w));
    let mut parts = FdTerms::default();
    parts.add_scaled(1.0, &ti);
    parts.add_scaled(w.tau, &ts);
    parts.add_scaled(w.tau, &tt);
    let out = LossBreakdown {
        total: fi + w.tau * (fs + ft),
        fd_instance: fi,
        fd_spatial: fs,
        fd_temporal: ft,
        con: parts.con,
        var: parts.var,
        autocov: parts.autocov,
        xcorr: parts.xcorr,
    };
    let grads = if grad {
        gi.into_iter().zip(gs).zip(gt).map(|((z, z_s), z_t)| ProjectionGrads { z, z_s: z_s.scale(w.tau), z_t: z_t.scale(w.tau) }).collect()
    } else {
        Vec::new()
    };
    Ok((out, grads))
}

#[cfg(test)]
mod tests;
