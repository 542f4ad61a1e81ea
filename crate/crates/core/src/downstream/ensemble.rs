use super::argmax;
use crate::error::{Error, Result};
use crate::tensor::Mat;

/// Averaged probabilities and their argmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub probs: Mat,
    pub predictions: Vec<usize>,
}

/// Late fusion: the mean of each model's `[N][classes]` probabilities.
/// Ties go to the lower class index.
pub fn ensemble(members: &[Mat]) -> Result<Ensemble> {
    let first = members.first().ok_or_else(|| Error::Eval("ensemble of zero models".into()))?;
    for (k, m) in members.iter().enumerate() {
        if m.cols() != first.cols() {
            return Err(Error::Shape(format!("model {k} predicts {} classes, model 0 predicts {}", m.cols(), first.cols())));
        }
        if m.rows() != first.rows() {
            return Err(Error::Shape(format!("model {k} scored {} samples, model 0 scored {}", m.rows(), first.rows())));
        }
    }
    let mut probs = first.clone();
    for m in &members[1..] {
        probs.add_assign(m);
    }
    let probs = probs.scale(1.0 / members.len() as f64);
    let predictions = probs.iter_rows().map(argmax).collect();
    Ok(Ensemble { probs, predictions })
}
