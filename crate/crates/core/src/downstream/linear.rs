use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, softmax_in_place, Labeled};
use crate::error::{Error, Result};
use crate::params::{Grads, Init, ParamStore};
use crate::pretrain::Adam;
use crate::tensor::Mat;

/// Settings of a softmax-regression head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    /// Full-batch Adam steps.
    pub epochs: usize,
    pub lr: f64,
    /// L2 penalty on the weights (not the bias).
    pub weight_decay: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 300, lr: 0.05, weight_decay: 0.0 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("probe lr must be positive and weight_decay nonnegative".into()));
        }
        Ok(())
    }
}

/// Affine classifier over standardized features. The standardization is
/// itself affine, so the whole head is one affine map of the raw features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// `[D][classes]`.
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn classes(&self) -> usize {
        self.bias.len()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, x: &Mat) -> Mat {
        let mut z = x.clone();
        for i in 0..z.rows() {
            for (j, v) in z.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) * self.inv_std[j];
            }
        }
        z
    }

    pub fn logits(&self, x: &Mat) -> Result<Mat> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!("head expects {} features, got {}", self.input_dim(), x.cols())));
        }
        let mut out = self.standardize(x).matmul(&self.weight);
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Row-wise class probabilities.
    pub fn probs(&self, x: &Mat) -> Result<Mat> {
        let mut p = self.logits(x)?;
        for i in 0..p.rows() {
            softmax_in_place(p.row_mut(i));
        }
        Ok(p)
    }

    pub fn predict(&self, x: &Mat) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.iter_rows().map(argmax).collect())
    }

    /// Trains on rows of `x` with labels in `0..classes` by full-batch Adam
    /// on the mean cross-entropy. Starts from zero weights, so the result is
    /// a deterministic function of the data.
    pub fn fit(x: &Mat, labels: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        cfg.validate()?;
        let (n, d) = x.shape();
        if n == 0 || n != labels.len() {
            return Err(Error::Shape(format!("{n} feature rows for {} labels", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Eval(format!("label {bad} outside 0..{classes}")));
        }
        let mean = x.col_means();
        let inv_std: Vec<f64> = (0..d)
            .map(|j| {
                let var = x.iter_rows().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if var > 1e-24 {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut head = Self { mean, inv_std, weight: Mat::zeros(d, classes), bias: vec![0.0; classes] };
        let z = head.standardize(x);

        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = store.declare("w", d, classes, Init::Zeros, &mut rng);
        let b = store.declare("b", 1, classes, Init::Zeros, &mut rng);
        let mut opt = Adam::new(&store, 0.0);
        for _ in 0..cfg.epochs {
            let mut logits = z.matmul(store.get(w));
            let bias = store.get(b).row(0).to_vec();
            for i in 0..n {
                let row = logits.row_mut(i);
                for (v, bj) in row.iter_mut().zip(&bias) {
                    *v += bj;
                }
                softmax_in_place(row);
                row[labels[i]] -= 1.0;
            }
            let g = logits.scale(1.0 / n as f64);
            let mut gw = z.matmul_tn(&g);
            gw.scaled_add_assign(cfg.weight_decay, store.get(w));
            let gb = Mat::row_vector(&g.col_means().iter().map(|m| m * n as f64).collect::<Vec<_>>());
            let mut grads = Grads::new(&store);
            grads.accumulate(w, &gw);
            grads.accumulate(b, &gb);
            opt.step(&mut store, &grads, cfg.lr);
        }
        head.weight = store.get(w).clone();
        head.bias = store.get(b).row(0).to_vec();
        Ok(head)
    }
}

/// Outcome of [`linear_probe`].
#[derive(Clone, Debug, Serialize)]
pub struct ProbeResult {
    /// Test top-1 accuracy in `[0, 1]`.
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    #[serde(skip)]
    pub head: LinearHead,
}

pub(crate) fn stack(set: &[Labeled]) -> Result<Mat> {
    let d = set.first().map_or(0, |l| l.embedding.len());
    if let Some(bad) = set.iter().find(|l| l.embedding.len() != d) {
        return Err(Error::Shape(format!("embedding of {} has {} values, expected {d}", bad.id, bad.embedding.len())));
    }
    Ok(Mat::from_rows(&set.iter().map(|l| l.embedding.as_slice()).collect::<Vec<_>>()))
}

/// Trains one affine layer with softmax cross-entropy on frozen `train`
/// embeddings and reports top-1 accuracy on `test`.
pub fn linear_probe(train: &[Labeled], test: &[Labeled], cfg: &ProbeConfig) -> Result<ProbeResult> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Eval("linear probe needs nonempty train and test sets".into()));
    }
    let seen: BTreeSet<usize> = train.iter().map(|l| l.label).collect();
    if let Some(l) = test.iter().find(|l| !seen.contains(&l.label)) {
        return Err(Error::Eval(format!("test sample {} has class {} which never occurs in training", l.id, l.label)));
    }
    let classes = seen.iter().next_back().map_or(0, |m| m + 1);
    let labels: Vec<usize> = train.iter().map(|l| l.label).collect();
    let head = LinearHead::fit(&stack(train)?, &labels, classes, cfg)?;
    let predictions = head.predict(&stack(test)?)?;
    let correct = predictions.iter().zip(test).filter(|(p, l)| **p == l.label).count();
    Ok(ProbeResult { accuracy: correct as f64 / test.len() as f64, predictions, head })
}
