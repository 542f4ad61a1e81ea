use rand_chacha::ChaCha8Rng;

use crate::autograd::{BatchStats, Tape, Var, NORM_EPS};
use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Mat;

use super::ProjectionSet;

/// How batch normalization behaves in a projector pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics; needs at least two rows.
    Train,
    /// Running averages.
    Eval,
    /// Skipped entirely, leaving a plain MLP (used by affine oracles).
    Bypass,
}

#[derive(Clone, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

/// `Linear → BN → ReLU → Linear → BN → ReLU → Linear`.
#[derive(Clone, Debug)]
pub struct Projector {
    linear: [(ParamId, ParamId); 3],
    norms: [Norm; 2],
}

/// Batch statistics seen in a training pass, keyed by running-stat buffers.
#[derive(Clone, Debug, Default)]
pub struct ProjectorStats {
    entries: Vec<(ParamId, ParamId, BatchStats)>,
}

impl ProjectorStats {
    pub fn extend(&mut self, other: ProjectorStats) {
        self.entries.extend(other.entries);
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries_len(&self) -> usize {
        self.entries.len()
    }

    /// Exponential moving average update of the running buffers.
    pub fn apply(&self, store: &mut ParamStore, momentum: f64) {
        for (mean_id, var_id, stats) in &self.entries {
            for (id, fresh) in [(*mean_id, &stats.mean), (*var_id, &stats.var)] {
                let buf = store.get_mut(id);
                for (b, f) in buf.as_mut_slice().iter_mut().zip(fresh) {
                    *b = (1.0 - momentum) * *b + momentum * f;
                }
            }
        }
    }
}

impl Projector {
    pub fn declare(store: &mut ParamStore, prefix: &str, dim_in: usize, dim_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut lin = |i: usize, fan_in: usize| {
            (
                store.declare(&format!("{prefix}/l{i}/w"), fan_in, dim_out, Init::FanIn(fan_in), rng),
                // nonzero so a sample whose hidden units are all off does not
                // project to the zero vector
                store.declare(&format!("{prefix}/l{i}/b"), 1, dim_out, Init::FanIn(fan_in), rng),
            )
        };
        let linear = [lin(0, dim_in), lin(1, dim_out), lin(2, dim_out)];
        let mut norm = |i: usize| Norm {
            gain: store.declare(&format!("{prefix}/bn{i}/gain"), 1, dim_out, Init::Ones, rng),
            bias: store.declare(&format!("{prefix}/bn{i}/bias"), 1, dim_out, Init::Zeros, rng),
            running_mean: store.declare_buffer(&format!("{prefix}/bn{i}/running_mean"), Mat::zeros(1, dim_out)),
            running_var: store.declare_buffer(&format!("{prefix}/bn{i}/running_var"), Mat::filled(1, dim_out, 1.0)),
        };
        let norms = [norm(0), norm(1)];
        Self { linear, norms }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, mode: BnMode) -> Result<(Var, ProjectorStats)> {
        if mode == BnMode::Train && tape.value(x).rows() < 2 {
            return Err(Error::BatchTooSmall(tape.value(x).rows()));
        }
        let mut stats = ProjectorStats::default();
        let mut h = x;
        for (i, &(w, b)) in self.linear.iter().enumerate() {
            let (w, b) = (tape.param(w), tape.param(b));
            h = tape.linear(h, w, b);
            if i == 2 {
                break;
            }
            let n = &self.norms[i];
            match mode {
                BnMode::Train => {
                    let (g, bb) = (tape.param(n.gain), tape.param(n.bias));
                    let (out, s) = tape.batch_norm(h, g, bb);
                    stats.entries.push((n.running_mean, n.running_var, s));
                    h = out;
                }
                BnMode::Eval => h = eval_norm(tape, h, n),
                BnMode::Bypass => {}
            }
            h = tape.relu(h);
        }
        Ok((h, stats))
    }
}

/// Normalization with frozen running statistics, as one affine map.
fn eval_norm(tape: &mut Tape, h: Var, n: &Norm) -> Var {
    let store = tape.store();
    let (mean, var) = (store.get(n.running_mean), store.get(n.running_var));
    let (gain, bias) = (store.get(n.gain), store.get(n.bias));
    let d = mean.cols();
    let mut diag = Mat::zeros(d, d);
    let mut shift = Mat::zeros(1, d);
    for j in 0..d {
        let s = gain[(0, j)] / (var[(0, j)] + NORM_EPS).sqrt();
        diag[(j, j)] = s;
        shift[(0, j)] = bias[(0, j)] - mean[(0, j)] * s;
    }
    let (diag, shift) = (tape.input(diag), tape.input(shift));
    tape.linear(h, diag, shift)
}

/// The three projector heads.
#[derive(Clone, Debug)]
pub struct Projectors {
    pub temporal: Projector,
    pub spatial: Projector,
    pub instance: Projector,
    repr_dim: usize,
}

/// Projector outputs recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ProjectedVars {
    pub z_t: Var,
    pub z_s: Var,
    pub z: Var,
}

impl Projectors {
    /// Declares `proj/t` and `proj/s` (`C_r → C_p`) and `proj/i` (`2·C_r → 2·C_p`).
    pub fn declare(store: &mut ParamStore, repr_dim: usize, proj_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            temporal: Projector::declare(store, "proj/t", repr_dim, proj_dim, rng),
            spatial: Projector::declare(store, "proj/s", repr_dim, proj_dim, rng),
            instance: Projector::declare(store, "proj/i", 2 * repr_dim, 2 * proj_dim, rng),
            repr_dim,
        }
    }

    /// Projects stacked instance embeddings `h = [h_t | h_s]` (`N x 2·C_r`).
    pub fn forward(&self, tape: &mut Tape, h: Var, mode: BnMode) -> Result<(ProjectedVars, ProjectorStats)> {
        let c = self.repr_dim;
        if tape.value(h).cols() != 2 * c {
            return Err(Error::Shape(format!("projector input has {} columns, expected {}", tape.value(h).cols(), 2 * c)));
        }
        let h_t = tape.slice_cols(h, 0, c);
        let h_s = tape.slice_cols(h, c, c);
        let (z_t, mut stats) = self.temporal.forward(tape, h_t, mode)?;
        let (z_s, s) = self.spatial.forward(tape, h_s, mode)?;
        stats.extend(s);
        let (z, s) = self.instance.forward(tape, h, mode)?;
        stats.extend(s);
        Ok((ProjectedVars { z_t, z_s, z }, stats))
    }

    /// Value-only projection of `h_t` and `h_s` (each `N x C_r`).
    pub fn project(&self, store: &ParamStore, h_t: &Mat, h_s: &Mat, mode: BnMode) -> Result<ProjectionSet> {
        if h_t.shape() != h_s.shape() {
            return Err(Error::Shape(format!("h_t {:?} and h_s {:?} differ", h_t.shape(), h_s.shape())));
        }
        let mut tape = Tape::new(store);
        let h = tape.input(Mat::hstack(&[h_t, h_s]));
        let (v, _) = self.forward(&mut tape, h, mode)?;
        Ok(ProjectionSet { z_t: tape.value(v.z_t).clone(), z_s: tape.value(v.z_s).clone(), z: tape.value(v.z).clone() })
    }
}
