use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::terms::*;
use super::*;
use crate::autograd::Tape;
use crate::params::ParamStore;

fn random_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect())
}

fn random_set(n: usize, d: usize, rng: &mut ChaCha8Rng) -> ProjectionSet {
    ProjectionSet { z_t: random_mat(n, d, rng), z_s: random_mat(n, d, rng), z: random_mat(n, 2 * d, rng) }
}

fn design() -> Mat {
    Mat::from_rows(&[[3.0, 3.0], [-3.0, 3.0], [3.0, -3.0], [-3.0, -3.0]])
}

#[test]
fn separability_composition() {
    let w = LossWeights::default();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random_mat(4, 3, &mut r), random_mat(4, 3, &mut r));
    let single = w.mu * term_variance(&a, w.gamma, w.epsilon).unwrap() + term_autocov(&a).unwrap();
    assert!((loss_sep(&[&a], &w).unwrap() - single).abs() < 1e-12);

    let no_xc = LossWeights { lambda: 0.0, ..w.clone() };
    let part = |z: &Mat| w.mu * term_variance(z, w.gamma, w.epsilon).unwrap() + term_autocov(z).unwrap();
    assert!((loss_sep(&[&a, &b], &no_xc).unwrap() - (part(&a) + part(&b))).abs() < 1e-12);
    let want = part(&a) + part(&b) + w.lambda * term_xcorr(&a, &b).unwrap();
    assert!((loss_sep(&[&a, &b], &w).unwrap() - want).abs() < 1e-12);
}

#[test]
fn fd_composition_and_isolation() {
    let w = LossWeights::default();
    let z = design();
    // identical views: consistency vanishes
    assert_eq!(loss_con(&[&z, &z], w.kappa, w.eta).unwrap(), 0.0);
    assert_eq!(loss_fd(&[&z, &z], &w).unwrap(), loss_sep(&[&z, &z], &w).unwrap());

    let mut r = ChaCha8Rng::seed_from_u64(2);
    let (a, b) = (random_mat(5, 3, &mut r), random_mat(5, 3, &mut r));
    let only_mu = LossWeights { kappa: 0.0, eta: 0.0, lambda: 0.0, autocov: 0.0, mu: 2.0, ..w.clone() };
    let v = term_variance(&a, w.gamma, w.epsilon).unwrap() + term_variance(&b, w.gamma, w.epsilon).unwrap();
    assert!((loss_fd(&[&a, &b], &only_mu).unwrap() - 2.0 * v).abs() < 1e-12);
    let want = loss_con(&[&a, &b], w.kappa, w.eta).unwrap() + loss_sep(&[&a, &b], &w).unwrap();
    assert_eq!(loss_fd(&[&a, &b], &w).unwrap(), want);
}

#[test]
fn total_composition() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let sets = vec![random_set(6, 3, &mut r), random_set(6, 3, &mut r)];
    let w = LossWeights::default();
    let b = loss_total(&sets, &w).unwrap();
    let fd = |f: fn(&ProjectionSet) -> &Mat| loss_fd(&sets.iter().map(f).collect::<Vec<_>>(), &w).unwrap();
    let (fi, fs, ft) = (fd(|s| &s.z), fd(|s| &s.z_s), fd(|s| &s.z_t));
    assert_eq!(b.fd_instance, fi);
    assert_eq!(b.fd_spatial, fs);
    assert_eq!(b.fd_temporal, ft);
    assert_eq!(b.total, fi + w.tau * (fs + ft));
    let recomposed = b.con + w.mu * b.var + w.autocov * b.autocov + w.lambda * b.xcorr;
    assert!((recomposed - b.total).abs() < 1e-12 * b.total.abs().max(1.0));

    let tau0 = LossWeights { tau: 0.0, ..w.clone() };
    assert_eq!(loss_total(&sets, &tau0).unwrap().total, fi);
}

#[test]
fn identical_domains_scale_by_one_plus_two_tau() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let (a, b) = (random_mat(5, 4, &mut r), random_mat(5, 4, &mut r));
    let sets: Vec<ProjectionSet> = [a, b].into_iter().map(|m| ProjectionSet { z_t: m.clone(), z_s: m.clone(), z: m }).collect();
    let w = LossWeights::default();
    let fd = loss_fd(&[&sets[0].z, &sets[1].z], &w).unwrap();
    let total = loss_total(&sets, &w).unwrap().total;
    assert!((total - (1.0 + 2.0 * w.tau) * fd).abs() < 1e-12 * total.abs());
}

#[test]
fn weights_validate() {
    LossWeights::default().validate().unwrap();
    assert!(LossWeights { epsilon: 0.0, ..Default::default() }.validate().is_err());
    assert!(LossWeights { mu: -1.0, ..Default::default() }.validate().is_err());
    assert!(LossWeights { tau: f64::NAN, ..Default::default() }.validate().is_err());
}

/// Central differences of `loss_total` against the analytic gradient.
fn check_total_grad(sets: &[ProjectionSet], w: &LossWeights) -> f64 {
    let (_, grads) = total_grad(sets, w, true).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (a, g) in grads.iter().enumerate() {
        for which in 0..3 {
            let analytic = [&g.z_t, &g.z_s, &g.z][which];
            for k in 0..analytic.len() {
                let eval = |delta: f64| {
                    let mut s = sets.to_vec();
                    let m = match which {
                        0 => &mut s[a].z_t,
                        1 => &mut s[a].z_s,
                        _ => &mut s[a].z,
                    };
                    m.as_mut_slice()[k] += delta;
                    loss_total(&s, w).unwrap().total
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = analytic.as_slice()[k];
                let scale = fd.abs().max(an.abs());
                if scale > 1e-6 {
                    worst = worst.max((fd - an).abs() / scale);
                }
            }
        }
    }
    worst
}

#[test]
fn total_gradient_matches_finite_differences() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    // large eta and lambda so every term contributes visibly
    let w = LossWeights { eta: 0.7, lambda: 0.3, gamma: 2.0, ..Default::default() };
    for k in [2, 3] {
        let sets: Vec<ProjectionSet> = (0..k).map(|_| random_set(5, 3, &mut r)).collect();
        let err = check_total_grad(&sets, &w);
        assert!(err < 1e-6, "K={k}: relative error {err}");
    }
}

#[test]
fn variance_gradient_is_zero_when_clamped() {
    let z = design();
    let (v, g) = variance_grad(&z, 1.0, 1e-4).unwrap();
    assert_eq!(v, 0.0);
    assert_eq!(g.max_abs(), 0.0);
}

fn mat_strategy(n: usize, d: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-3.0f64..3.0, n * d).prop_map(move |v| Mat::from_vec(n, d, v))
}

fn permute_rows(m: &Mat, perm: &[usize]) -> Mat {
    Mat::from_rows(&perm.iter().map(|&p| m.row(p).to_vec()).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn terms_are_row_permutation_invariant(
        a in mat_strategy(5, 3),
        b in mat_strategy(5, 3),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let w = LossWeights { eta: 0.5, ..Default::default() };
        let (pa, pb) = (permute_rows(&a, &perm), permute_rows(&b, &perm));
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-10 * x.abs().max(1.0);
        prop_assert!(close(loss_fd(&[&a, &b], &w).unwrap(), loss_fd(&[&pa, &pb], &w).unwrap()));
        prop_assert!(close(term_xcorr(&a, &b).unwrap(), term_xcorr(&pa, &pb).unwrap()));
    }

    #[test]
    fn variance_and_autocov_ignore_row_shifts(z in mat_strategy(4, 3), shift in prop::collection::vec(-5.0f64..5.0, 3)) {
        let mut moved = z.clone();
        for r in 0..4 {
            for (v, s) in moved.row_mut(r).iter_mut().zip(&shift) {
                *v += s;
            }
        }
        prop_assert!((term_variance(&z, 1.0, 1e-4).unwrap() - term_variance(&moved, 1.0, 1e-4).unwrap()).abs() < 1e-10);
        prop_assert!((term_autocov(&z).unwrap() - term_autocov(&moved).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn xcorr_is_symmetric(a in mat_strategy(6, 4), b in mat_strategy(6, 4)) {
        prop_assert!((term_xcorr(&a, &b).unwrap() - term_xcorr(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn losses_are_nonnegative(a in mat_strategy(4, 3), b in mat_strategy(4, 3)) {
        let sets = vec![
            ProjectionSet { z_t: a.clone(), z_s: b.clone(), z: Mat::hstack(&[&a, &b]) },
            ProjectionSet { z_t: b.clone(), z_s: a.clone(), z: Mat::hstack(&[&b, &a]) },
        ];
        let l = loss_total(&sets, &LossWeights::default()).unwrap();
        prop_assert!(l.total >= 0.0 && l.con >= 0.0 && l.var >= 0.0 && l.autocov >= 0.0 && l.xcorr >= 0.0);
        prop_assert_eq!(loss_con(&[&a, &a, &a], 5.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn scaling_clears_the_variance_hinge(z in mat_strategy(5, 3)) {
        let min_std = (0..3)
            .map(|j| {
                let col = z.col(j);
                let m = col.iter().sum::<f64>() / 5.0;
                (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 4.0).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        prop_assume!(min_std > 1e-3);
        let c = 1.0 / min_std;
        prop_assert_eq!(term_variance(&z.scale(c), 1.0, 1e-4).unwrap(), 0.0);
    }
}

// ---------------------------------------------------------------- projector

fn projectors(c_r: usize, c_p: usize, seed: u64) -> (Projectors, ParamStore) {
    let mut store = ParamStore::new();
    let p = Projectors::declare(&mut store, c_r, c_p, &mut ChaCha8Rng::seed_from_u64(seed));
    (p, store)
}

#[test]
fn projector_shapes() {
    let (p, store) = projectors(8, 16, 10);
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let set = p.project(&store, &random_mat(3, 8, &mut r), &random_mat(3, 8, &mut r), BnMode::Train).unwrap();
    assert_eq!(set.z_t.shape(), (3, 16));
    assert_eq!(set.z_s.shape(), (3, 16));
    assert_eq!(set.z.shape(), (3, 32));
}

#[test]
fn projector_needs_two_rows_in_training() {
    let (p, store) = projectors(4, 4, 12);
    let h = Mat::zeros(1, 4);
    assert!(matches!(p.project(&store, &h, &h, BnMode::Train), Err(Error::BatchTooSmall(1))));
    assert!(p.project(&store, &h, &h, BnMode::Eval).is_ok());
}

#[test]
fn identical_rows_project_identically() {
    let (p, store) = projectors(4, 6, 13);
    let row = Mat::from_rows(&[[0.3, -0.1, 0.8, 0.2], [0.3, -0.1, 0.8, 0.2]]);
    for mode in [BnMode::Train, BnMode::Eval, BnMode::Bypass] {
        let set = p.project(&store, &row, &row, mode).unwrap();
        assert_eq!(set.z.row(0), set.z.row(1));
        assert_eq!(set.z_t.row(0), set.z_t.row(1));
    }
}

#[test]
fn bypassed_projector_matches_affine_oracle() {
    let (p, mut store) = projectors(3, 3, 14);
    let mut r = ChaCha8Rng::seed_from_u64(15);
    // identity-like weights and positive inputs keep the ReLUs transparent
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        if name.starts_with("proj/t/l") && name.ends_with("/w") {
            store.set(id, Mat::identity(3).scale(2.0)).unwrap();
        } else if name.starts_with("proj/t/l") && name.ends_with("/b") {
            store.set(id, Mat::row_vector(&[0.1, 0.2, 0.3])).unwrap();
        }
    }
    let h_t = Mat::from_vec(4, 3, (0..12).map(|_| r.random_range(0.0..1.0)).collect());
    let set = p.project(&store, &h_t, &h_t, BnMode::Bypass).unwrap();
    for i in 0..4 {
        for j in 0..3 {
            let b = [0.1, 0.2, 0.3][j];
            let want = 2.0 * (2.0 * (2.0 * h_t[(i, j)] + b) + b) + b;
            assert!((set.z_t[(i, j)] - want).abs() < 1e-9);
        }
    }
}

#[test]
fn running_statistics_drive_eval_mode() {
    let (p, mut store) = projectors(2, 2, 16);
    let mut r = ChaCha8Rng::seed_from_u64(17);
    let h = random_mat(6, 4, &mut r);
    let mut tape = Tape::new(&store);
    let hv = tape.input(h.clone());
    let (_, stats) = p.forward(&mut tape, hv, BnMode::Train).unwrap();
    assert_eq!(stats.entries_len(), 6);
    let before = store.by_name("proj/i/bn0/running_mean").unwrap().clone();
    stats.apply(&mut store, 1.0);
    let after = store.by_name("proj/i/bn0/running_mean").unwrap().clone();
    assert_ne!(before, after);
    // with momentum 1 the first layer's eval normalization uses exactly the
    // batch statistics, up to the biased/unbiased variance factor
    let mut tape = Tape::new(&store);
    let hv = tape.input(h);
    let (eval, _) = p.forward(&mut tape, hv, BnMode::Eval).unwrap();
    assert!(tape.value(eval.z).is_finite());
    assert!(!store.is_trainable(store.id("proj/i/bn0/running_var").unwrap()));
}
