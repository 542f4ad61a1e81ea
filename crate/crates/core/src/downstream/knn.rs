use serde::Serialize;

use super::Labeled;
use crate::error::{Error, Result};

/// Outcome of [`knn_retrieve`].
#[derive(Clone, Debug, Serialize)]
pub struct KnnResult {
    /// Fraction of queries whose nearest gallery item has the query's label.
    pub top1: f64,
    /// Per query, gallery indices by decreasing cosine similarity, truncated
    /// to the requested depth.
    pub ranked: Vec<Vec<usize>>,
}

fn unit(l: &Labeled, role: &str) -> Result<Vec<f64>> {
    let norm = l.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroNorm { what: format!("embedding of {}", l.id), context: format!("kNN {role}") });
    }
    Ok(l.embedding.iter().map(|v| v / norm).collect())
}

/// Nearest-neighbour retrieval by cosine similarity. Equal similarities keep
/// the lower gallery index first.
pub fn knn_retrieve(queries: &[Labeled], gallery: &[Labeled], depth: usize) -> Result<KnnResult> {
    if queries.is_empty() || gallery.is_empty() {
        return Err(Error::Eval("kNN needs nonempty query and gallery sets".into()));
    }
    let g: Vec<Vec<f64>> = gallery.iter().map(|l| unit(l, "gallery")).collect::<Result<_>>()?;
    let d = g[0].len();
    let mut ranked = Vec::with_capacity(queries.len());
    let mut correct = 0;
    for q in queries {
        let u = unit(q, "query")?;
        if u.len() != d {
            return Err(Error::Shape(format!("query {} has {} values, gallery has {d}", q.id, u.len())));
        }
        let sims: Vec<f64> = g.iter().map(|x| x.iter().zip(&u).map(|(a, b)| a * b).sum()).collect();
        let mut order: Vec<usize> = (0..gallery.len()).collect();
        // stable sort keeps index order among ties
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
        if gallery[order[0]].label == q.label {
            correct += 1;
        }
        order.truncate(depth.max(1));
        ranked.push(order);
    }
    Ok(KnnResult { top1: correct as f64 / queries.len() as f64, ranked })
}
