//! Loss functions against direct evaluations of their defining formulas.

mod common;

use common::{random_matrix, rel_err, rng, H};
use proptest::prelude::*;
use rand::Rng;
use sgil::data::{InteractionStore, SocialGraph};
use sgil::numerics::{DenseMatrix, Tape};
use sgil::objectives::{
    bpr_loss, density_ratio, erm_softmax_loss_value, hsic_rbf, invariance_objective,
    invariance_on_tape, jaccard, rule_based_filter, Batch,
};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / ((na + 1e-12) * (nb + 1e-12))
}

fn direct_softmax(p: &DenseMatrix, q: &DenseMatrix, pairs: &[(u32, u32)], tau: f64) -> f64 {
    let mut items: Vec<u32> = pairs.iter().map(|x| x.1).collect();
    items.sort_unstable();
    items.dedup();
    let mut total = 0.0;
    for &(a, i) in pairs {
        let num = (cosine(p.row(a as usize), q.row(i as usize)) / tau).exp();
        let den: f64 = items
            .iter()
            .map(|&j| (cosine(p.row(a as usize), q.row(j as usize)) / tau).exp())
            .sum();
        total -= (num / den).ln();
    }
    total / pairs.len() as f64
}

#[test]
fn softmax_matches_direct_formula() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let p = random_matrix(&mut r, 3, 5, 1.0);
        let q = random_matrix(&mut r, 4, 5, 1.0);
        let pairs: Vec<(u32, u32)> = (0..6)
            .map(|_| (r.random_range(0..3), r.random_range(0..4)))
            .collect();
        let got = erm_softmax_loss_value(&p, &q, &Batch::new(pairs.clone()), 0.2).unwrap();
        let want = direct_softmax(&p, &q, &pairs, 0.2);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!(got >= 0.0);
    }
}

#[test]
fn scaled_cosine_preserves_candidate_order() {
    let mut r = rng(5);
    let p = random_matrix(&mut r, 1, 4, 1.0);
    let q = random_matrix(&mut r, 7, 4, 1.0);
    let order = |tau: f64| {
        let mut idx: Vec<usize> = (0..7).collect();
        let s: Vec<f64> = (0..7).map(|j| cosine(p.row(0), q.row(j)) / tau).collect();
        idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        idx
    };
    for tau in [0.05, 0.2, 1.0, 7.0] {
        assert_eq!(order(tau), order(1.0));
    }
}

#[test]
fn bpr_matches_direct_formula() {
    for seed in 0..10 {
        let mut r = rng(50 + seed);
        let p = random_matrix(&mut r, 3, 4, 1.0);
        let q = random_matrix(&mut r, 5, 4, 1.0);
        let triples: Vec<(u32, u32, u32)> = (0..7)
            .map(|_| {
                (
                    r.random_range(0..3),
                    r.random_range(0..5),
                    r.random_range(0..5),
                )
            })
            .collect();
        let lambda = 1e-3;
        let mut tape = Tape::new();
        let (pv, qv) = (tape.leaf(p.clone()), tape.leaf(q.clone()));
        let l = bpr_loss(&mut tape, pv, qv, &triples, Some((lambda, &[pv, qv]))).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut want = 0.0;
        for &(a, i, j) in &triples {
            let x = dot(p.row(a as usize), q.row(i as usize))
                - dot(p.row(a as usize), q.row(j as usize));
            want -= (1.0 / (1.0 + (-x).exp())).ln();
        }
        let sq: f64 = p.data().iter().chain(q.data()).map(|v| v * v).sum();
        want += lambda * sq;
        assert!((tape.scalar(l) - want).abs() < 1e-12);
    }
}

#[test]
fn invariance_gradient_formula() {
    let mut r = rng(9);
    for k in 1..=5 {
        let losses: Vec<f64> = (0..k).map(|_| r.random::<f64>() * 3.0).collect();
        let beta = 0.15;
        let mut tape = Tape::new();
        let vars: Vec<_> = losses
            .iter()
            .map(|&l| tape.leaf(DenseMatrix::scalar(l)))
            .collect();
        let (total, _, _) = invariance_on_tape(&mut tape, &vars, beta).unwrap();
        let grads = tape.backward(total).unwrap();
        let mean = losses.iter().sum::<f64>() / k as f64;
        for (i, &v) in vars.iter().enumerate() {
            let analytic = grads.get(v).unwrap().item();
            let formula = 1.0 / k as f64 + 2.0 * beta * (losses[i] - mean) / k as f64;
            let f = |d: f64| {
                let mut l = losses.clone();
                l[i] += d;
                invariance_objective(&l, beta).unwrap().total
            };
            let numeric = (f(H) - f(-H)) / (2.0 * H);
            assert!((analytic - formula).abs() < 1e-14);
            assert!(rel_err(analytic, numeric, 1e-6) < 1e-6);
        }
    }
}

#[test]
fn penalty_ignores_environment_order() {
    let a = invariance_objective(&[0.3, 1.2, 0.7, 0.1], 0.1).unwrap();
    let b = invariance_objective(&[0.1, 0.7, 0.3, 1.2], 0.1).unwrap();
    assert!((a.total - b.total).abs() < 1e-15);
    assert!((a.variance - b.variance).abs() < 1e-15);
}

#[test]
fn identical_losses_have_exactly_zero_variance() {
    for l in [0.1, 1.0 / 3.0, 2.846069985422599, 1e-9] {
        for k in 1..=6 {
            let b = invariance_objective(&vec![l; k], 0.2).unwrap();
            assert_eq!(b.variance, 0.0);
        }
    }
}

fn dense_hsic(x: &DenseMatrix, y: &DenseMatrix, sigma: f64) -> f64 {
    let n = x.rows();
    let kern = |m: &DenseMatrix| {
        DenseMatrix::from_fn(n, n, |i, j| {
            let d2: f64 = m
                .row(i)
                .iter()
                .zip(m.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
    };
    let h = DenseMatrix::from_fn(n, n, |i, j| f64::from(u8::from(i == j)) - 1.0 / n as f64);
    let prod = kern(x)
        .matmul(&h)
        .unwrap()
        .matmul(&kern(y))
        .unwrap()
        .matmul(&h)
        .unwrap();
    let trace: f64 = (0..n).map(|i| prod.get(i, i)).sum();
    trace / ((n - 1) as f64).powi(2)
}

#[test]
fn hsic_matches_dense_trace() {
    for n in 2..=8 {
        for seed in 0..5 {
            let mut r = rng(1000 * n as u64 + seed);
            let x = random_matrix(&mut r, n, 3, 1.0);
            let y = random_matrix(&mut r, n, 2, 1.0);
            let sigma = 0.5 + r.random::<f64>();
            let got = hsic_rbf(&x, &y, sigma).unwrap();
            assert!((got - dense_hsic(&x, &y, sigma)).abs() < 1e-10);
            assert!((got - hsic_rbf(&y, &x, sigma).unwrap()).abs() < 1e-12);
            assert!(got >= -1e-15);
        }
    }
}

#[test]
fn hsic_of_constant_sample_is_zero() {
    let mut r = rng(3);
    for n in 2..=8 {
        let x = DenseMatrix::from_fn(n, 3, |_, c| c as f64 - 0.7);
        let y = random_matrix(&mut r, n, 4, 1.0);
        assert_eq!(hsic_rbf(&x, &y, 1.0).unwrap(), 0.0);
    }
}

#[test]
fn jaccard_filter_hand_values() {
    // train items: u0 {0,1,2}, u1 {1,2,3}, u2 {4}, u3 {0,1,2}
    let train = vec![
        (0, 0),
        (0, 1),
        (0, 2),
        (1, 1),
        (1, 2),
        (1, 3),
        (2, 4),
        (3, 0),
        (3, 1),
        (3, 2),
    ];
    let store = InteractionStore::from_splits(4, 5, train, vec![], vec![]).unwrap();
    let social = SocialGraph::from_edges(4, vec![(0, 1), (0, 2), (0, 3)]).unwrap();
    let items = store.train_items();
    assert_eq!(jaccard(&items[0], &items[1]), 0.5);
    assert_eq!(jaccard(&items[0], &items[2]), 0.0);
    assert_eq!(jaccard(&items[0], &items[3]), 1.0);
    let kept = |t: f64| rule_based_filter(&social, &store, t).edges().to_vec();
    assert_eq!(kept(0.0), vec![(0, 1), (0, 2), (0, 3)]);
    assert_eq!(kept(0.5), vec![(0, 1), (0, 3)]);
    assert_eq!(kept(0.51), vec![(0, 3)]);
    assert_eq!(kept(1.0), vec![(0, 3)]);
}

proptest! {
    #[test]
    fn density_ratio_is_scaled_exponential(f in -20.0f64..20.0, c in 0.01f64..1000.0) {
        let want = c * f.exp();
        prop_assert!((density_ratio(f, c) - want).abs() / want < 1e-12);
    }

    #[test]
    fn softmax_loss_is_nonnegative(seed in 0u64..1000) {
        let mut r = rng(seed);
        let p = random_matrix(&mut r, 2, 3, 2.0);
        let q = random_matrix(&mut r, 3, 3, 2.0);
        let pairs = vec![(0, 0), (1, 2), (0, 1)];
        prop_assert!(erm_softmax_loss_value(&p, &q, &Batch::new(pairs), 0.2).unwrap() >= 0.0);
    }
}
