//! Individual decorrelation terms, each with its gradient.
//!
//! The `*_grad` functions return the value together with the gradient with
//! respect to every input matrix. The plain functions only drop the gradient.

use crate::error::{Error, Result};
use crate::tensor::Mat;

fn need_rows(z: &Mat) -> Result<()> {
    if z.rows() < 2 {
        return Err(Error::BatchTooSmall(z.rows()));
    }
    Ok(())
}

fn same_shapes(zs: &[&Mat]) -> Result<()> {
    if let Some(first) = zs.first() {
        if let Some(bad) = zs.iter().find(|z| z.shape() != first.shape()) {
            return Err(Error::Shape(format!("views {:?} and {:?} differ", first.shape(), bad.shape())));
        }
    }
    Ok(())
}

/// Mean-centered copy of `z` and its column means.
fn centered(z: &Mat) -> Mat {
    let means = z.col_means();
    let mut c = z.clone();
    for r in 0..c.rows() {
        for (v, m) in c.row_mut(r).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    c
}

/// Subtracts the column means of `g` in place; the adjoint of centering.
fn uncenter_grad(g: &mut Mat) {
    let means = g.col_means();
    for r in 0..g.rows() {
        for (v, m) in g.row_mut(r).iter_mut().zip(&means) {
            *v -= m;
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Intra-sample consistency over `K` row-aligned copies:
/// `(1/K) Σ_a [κ‖z_a − z̄‖ + η Σ_{b≠a} (1 − cos(z_a, z_b))]` per row, averaged
/// over rows.
pub fn loss_con(zs: &[&Mat], kappa: f64, eta: f64) -> Result<f64> {
    con_grad(zs, kappa, eta).map(|(v, _)| v)
}

pub fn con_grad(zs: &[&Mat], kappa: f64, eta: f64) -> Result<(f64, Vec<Mat>)> {
    let k = zs.len();
    if k < 2 {
        return Err(Error::Config(format!("consistency needs at least 2 copies, got {k}")));
    }
    same_shapes(zs)?;
    let (n, d) = zs[0].shape();
    if n == 0 {
        return Err(Error::BatchTooSmall(0));
    }
    let scale = 1.0 / (k as f64 * n as f64);
    let mut grads: Vec<Mat> = (0..k).map(|_| Mat::zeros(n, d)).collect();
    let mut total = 0.0;
    let mut mean = vec![0.0; d];
    let mut units = vec![vec![0.0; d]; k];
    for r in 0..n {
        let norms: Vec<f64> = zs.iter().map(|z| norm(z.row(r))).collect();
        if let Some(a) = norms.iter().position(|&v| v == 0.0) {
            return Err(Error::ZeroNorm { what: format!("row {r} of copy {a}"), context: "consistency loss".into() });
        }
        // identical copies sit at the minimum, where value and gradient are 0
        if zs[1..].iter().all(|z| z.row(r) == zs[0].row(r)) {
            continue;
        }
        mean.iter_mut().for_each(|m| *m = 0.0);
        for z in zs {
            for (m, v) in mean.iter_mut().zip(z.row(r)) {
                *m += v / k as f64;
            }
        }
        // κ part: d‖z_a − z̄‖/dz_c = u_c − (1/K) Σ_a u_a
        let mut u_sum = vec![0.0; d];
        for (a, z) in zs.iter().enumerate() {
            let diff: Vec<f64> = z.row(r).iter().zip(&mean).map(|(v, m)| v - m).collect();
            let len = norm(&diff);
            total += scale * kappa * len;
            let u = &mut units[a];
            if len > 0.0 {
                u.iter_mut().zip(&diff).for_each(|(o, x)| *o = x / len);
            } else {
                u.iter_mut().for_each(|o| *o = 0.0);
            }
            u_sum.iter_mut().zip(u.iter()).for_each(|(s, x)| *s += x);
        }
        for a in 0..k {
            let g = grads[a].row_mut(r);
            for j in 0..d {
                g[j] += scale * kappa * (units[a][j] - u_sum[j] / k as f64);
            }
        }
        // η part: every unordered pair appears twice.
        for a in 0..k {
            for b in a + 1..k {
                let (x, y) = (zs[a].row(r), zs[b].row(r));
                let (nx, ny) = (norms[a], norms[b]);
                let cos = dot(x, y) / (nx * ny);
                total += scale * eta * 2.0 * (1.0 - cos);
                let w = -scale * eta * 2.0;
                for j in 0..d {
                    let dx = (y[j] / ny - cos * x[j] / nx) / nx;
                    let dy = (x[j] / nx - cos * y[j] / ny) / ny;
                    grads[a][(r, j)] += w * dx;
                    grads[b][(r, j)] += w * dy;
                }
            }
        }
    }
    Ok((total, grads))
}

/// `(1/D) Σ_j ReLU(γ − sqrt(Var(Z[:, j]) + ε))` with unbiased variance.
pub fn term_variance(z: &Mat, gamma: f64, epsilon: f64) -> Result<f64> {
    variance_grad(z, gamma, epsilon).map(|(v, _)| v)
}

pub fn variance_grad(z: &Mat, gamma: f64, epsilon: f64) -> Result<(f64, Mat)> {
    need_rows(z)?;
    let (n, d) = z.shape();
    let c = centered(z);
    let mut g = Mat::zeros(n, d);
    let mut total = 0.0;
    let mut hinges = Vec::with_capacity(d);
    for j in 0..d {
        let var = (0..n).map(|i| c[(i, j)] * c[(i, j)]).sum::<f64>() / (n - 1) as f64;
        let s = (var + epsilon).sqrt();
        let hinge = gamma - s;
        hinges.push(hinge);
        if hinge > 0.0 {
            total += hinge / d as f64;
            if s > 0.0 {
                for i in 0..n {
                    g[(i, j)] = -c[(i, j)] / ((n - 1) as f64 * s * d as f64);
                }
            }
        }
    }
    crate::kinks::note_signs(&hinges);
    Ok((total, g))
}

/// Unbiased covariance matrix of the columns of `z`.
pub fn covariance(z: &Mat) -> Result<Mat> {
    need_rows(z)?;
    let c = centered(z);
    Ok(c.matmul_tn(&c).scale(1.0 / (z.rows() - 1) as f64))
}

fn off_diagonal_sq(m: &Mat) -> f64 {
    let mut s = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s
}

fn zero_diagonal(mut m: Mat) -> Mat {
    for i in 0..m.rows().min(m.cols()) {
        m[(i, i)] = 0.0;
    }
    m
}

/// `(1/D) Σ_{i≠j} Cov(Z)²_{ij}`.
pub fn term_autocov(z: &Mat) -> Result<f64> {
    let cov = covariance(z)?;
    Ok(off_diagonal_sq(&cov) / z.cols() as f64)
}

pub fn autocov_grad(z: &Mat) -> Result<(f64, Mat)> {
    need_rows(z)?;
    let (n, d) = z.shape();
    let c = centered(z);
    let cov = c.matmul_tn(&c).scale(1.0 / (n - 1) as f64);
    let value = off_diagonal_sq(&cov) / d as f64;
    // dL/dCov = (2/D)·offdiag(Cov), symmetric; the centered columns already
    // sum to zero so the centering adjoint is a no-op here.
    let g = zero_diagonal(cov).scale(2.0 / d as f64);
    Ok((value, c.matmul(&g).scale(2.0 / (n - 1) as f64)))
}

/// Mean-centered columns scaled to unit Euclidean norm, plus the norms.
fn standardized(z: &Mat, which: &str) -> Result<(Mat, Vec<f64>)> {
    let mut c = centered(z);
    let (n, d) = c.shape();
    let mut norms = vec![0.0; d];
    for (j, nj) in norms.iter_mut().enumerate() {
        *nj = (0..n).map(|i| c[(i, j)] * c[(i, j)]).sum::<f64>().sqrt();
        if *nj == 0.0 {
            return Err(Error::ZeroNorm { what: format!("column {j} of {which}"), context: "cross-correlation".into() });
        }
        for i in 0..n {
            c[(i, j)] /= *nj;
        }
    }
    Ok((c, norms))
}

/// Cross-correlation matrix of two views after standardizing each column.
pub fn cross_correlation(a: &Mat, b: &Mat) -> Result<Mat> {
    need_rows(a)?;
    same_shapes(&[a, b])?;
    let (ha, _) = standardized(a, "first view")?;
    let (hb, _) = standardized(b, "second view")?;
    Ok(ha.matmul_tn(&hb))
}

/// `Σ_{i≠j} Xcorr(Z_a, Z_b)²_{ij}`.
pub fn term_xcorr(a: &Mat, b: &Mat) -> Result<f64> {
    Ok(off_diagonal_sq(&cross_correlation(a, b)?))
}

/// Backpropagates a gradient on standardized columns to the raw matrix.
fn standardize_adjoint(hat: &Mat, norms: &[f64], dhat: &Mat) -> Mat {
    let (n, d) = hat.shape();
    let mut dz = Mat::zeros(n, d);
    for j in 0..d {
        let proj: f64 = (0..n).map(|i| hat[(i, j)] * dhat[(i, j)]).sum();
        for i in 0..n {
            dz[(i, j)] = (dhat[(i, j)] - hat[(i, j)] * proj) / norms[j];
        }
    }
    uncenter_grad(&mut dz);
    dz
}

pub fn xcorr_grad(a: &Mat, b: &Mat) -> Result<(f64, Mat, Mat)> {
    need_rows(a)?;
    same_shapes(&[a, b])?;
    let (ha, na) = standardized(a, "first view")?;
    let (hb, nb) = standardized(b, "second view")?;
    let x = ha.matmul_tn(&hb);
    let value = off_diagonal_sq(&x);
    let g = zero_diagonal(x).scale(2.0);
    let dha = hb.matmul_nt(&g);
    let dhb = ha.matmul(&g);
    Ok((value, standardize_adjoint(&ha, &na, &dha), standardize_adjoint(&hb, &nb, &dhb)))
}
