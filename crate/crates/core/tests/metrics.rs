//! Ranking metrics against exhaustive enumeration.

mod common;

use common::rng;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use sgil::data::{bucket_by_sparsity, EvalSplit, InteractionStore, ItemId};
use sgil::evaluator::{evaluate, evaluate_per_user, rank_and_score};
use sgil::numerics::DenseMatrix;

fn permutations(items: &[ItemId]) -> Vec<Vec<ItemId>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn dcg(order: &[ItemId], test: &[ItemId], n: usize) -> f64 {
    order
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| test.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum()
}

/// Among all orderings of the candidates, the one that puts higher scores
/// first and lower ids first among equals; the ideal DCG is the best over
/// every ordering.
fn oracle(scores: &[f64], excluded: &[ItemId], test: &[ItemId], n: usize) -> (f64, f64) {
    let cand: Vec<ItemId> = (0..scores.len() as ItemId)
        .filter(|i| !excluded.contains(i))
        .collect();
    let all = permutations(&cand);
    let ranked = all
        .iter()
        .find(|p| {
            p.windows(2).all(|w| {
                let (a, b) = (scores[w[0] as usize], scores[w[1] as usize]);
                a > b || (a == b && w[0] < w[1])
            })
        })
        .unwrap();
    let hits = ranked.iter().take(n).filter(|i| test.contains(i)).count();
    let ideal = all.iter().map(|p| dcg(p, test, n)).fold(0.0, f64::max);
    (
        hits as f64 / test.len() as f64,
        dcg(ranked, test, n) / ideal,
    )
}

fn fixture(seed: u64) -> (Vec<f64>, Vec<ItemId>, Vec<ItemId>) {
    let mut r = rng(seed);
    let n_items = r.random_range(2..=8);
    let scores: Vec<f64> = (0..n_items)
        .map(|_| r.random_range(0..4) as f64 * 0.5)
        .collect();
    let mut ids: Vec<ItemId> = (0..n_items as ItemId).collect();
    ids.shuffle(&mut r);
    let n_excl = r.random_range(0..=(n_items - 2).min(2));
    let mut excluded = ids[..n_excl].to_vec();
    let n_test = r.random_range(1..=n_items - n_excl);
    let mut test = ids[n_excl..n_excl + n_test].to_vec();
    excluded.sort_unstable();
    test.sort_unstable();
    (scores, excluded, test)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn matches_exhaustive_oracle(seed in any::<u64>()) {
        let (scores, excluded, test) = fixture(seed);
        let cutoffs = [1, 2, 3, 5, 10];
        let got = rank_and_score(&scores, &excluded, &test, &cutoffs).unwrap();
        for (m, &n) in got.iter().zip(&cutoffs) {
            let (recall, ndcg) = oracle(&scores, &excluded, &test, n);
            prop_assert!((m.recall - recall).abs() < 1e-12);
            prop_assert!((m.ndcg - ndcg).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&m.ndcg));
        }
        prop_assert!(got.windows(2).all(|w| w[0].recall <= w[1].recall));
    }
}

/// One-dimensional embeddings: user `u` scores item `i` as `u_scale[u] · item_score[i]`.
fn embeddings(user_scale: &[f64], item_score: &[f64]) -> (DenseMatrix, DenseMatrix) {
    (
        DenseMatrix::column(user_scale.to_vec()),
        DenseMatrix::column(item_score.to_vec()),
    )
}

#[test]
fn train_and_other_split_items_are_never_ranked() {
    // items 0..3 score highest but are train or validation items of user 0
    let store =
        InteractionStore::from_splits(1, 6, vec![(0, 0), (0, 1)], vec![(0, 2)], vec![(0, 5)])
            .unwrap();
    let (u, v) = embeddings(&[1.0], &[9.0, 8.0, 7.0, 0.5, 0.4, 0.3]);
    let rows = evaluate_per_user(&u, &v, &store, EvalSplit::Test, &[1, 2, 3]).unwrap();
    let m = &rows[0].1;
    assert_eq!((m[0].recall, m[1].recall, m[2].recall), (0.0, 0.0, 1.0));
    assert!((m[2].ndcg - 0.5).abs() < 1e-15);
    let val = evaluate_per_user(&u, &v, &store, EvalSplit::Validation, &[1]).unwrap();
    assert_eq!(val[0].1[0].recall, 1.0);
}

#[test]
fn report_is_macro_average_over_users_with_held_out_items() {
    let mut r = rng(4);
    let (m, n) = (30, 40);
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for u in 0..m {
        let mut items: Vec<u32> = (0..n).collect();
        items.shuffle(&mut r);
        pairs.extend(items[..r.random_range(2..10)].iter().map(|&i| (u, i)));
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (k, p) in pairs.into_iter().enumerate() {
        if k % 4 == 0 && p.0 % 5 != 0 {
            test.push(p)
        } else {
            train.push(p)
        }
    }
    let store = InteractionStore::from_splits(m as usize, n as usize, train, vec![], test).unwrap();
    let u = DenseMatrix::from_fn(m as usize, 3, |_, _| r.random_range(-1.0..1.0));
    let v = DenseMatrix::from_fn(n as usize, 3, |_, _| r.random_range(-1.0..1.0));
    let rows = evaluate_per_user(&u, &v, &store, EvalSplit::Test, &[10, 20]).unwrap();
    let users_with_test: Vec<usize> = rows.iter().map(|(u, _)| *u).collect();
    assert!(users_with_test.iter().all(|u| u % 5 != 0));
    let buckets = bucket_by_sparsity(&store);
    let report = evaluate(&u, &v, &store, EvalSplit::Test, &[10, 20], Some(&buckets)).unwrap();
    assert_eq!(report.users, rows.len());
    let mean = |c: usize| rows.iter().map(|(_, m)| m[c].ndcg).sum::<f64>() / rows.len() as f64;
    assert!((report.ndcg_at(10).unwrap() - mean(0)).abs() < 1e-15);
    assert!((report.ndcg_at(20).unwrap() - mean(1)).abs() < 1e-15);
    assert!(report.recall_at(20).unwrap() >= report.recall_at(10).unwrap());
    let weighted: f64 = report
        .per_bucket
        .values()
        .map(|b| b.ndcg[&10] * b.users as f64)
        .sum::<f64>()
        / rows.len() as f64;
    assert!((weighted - mean(0)).abs() < 1e-12);
    assert_eq!(
        report.per_bucket.values().map(|b| b.users).sum::<usize>(),
        rows.len()
    );
}

#[test]
fn repeated_evaluation_is_bit_identical() {
    let store = InteractionStore::from_splits(
        3,
        5,
        vec![(0, 0), (1, 1)],
        vec![],
        vec![(0, 3), (1, 4), (2, 2)],
    )
    .unwrap();
    let (u, v) = embeddings(&[1.0, -1.0, 0.5], &[0.1, 0.1, 0.1, 0.1, 0.1]);
    let a = evaluate(&u, &v, &store, EvalSplit::Test, &[1, 3], None).unwrap();
    for _ in 0..5 {
        assert_eq!(
            evaluate(&u, &v, &store, EvalSplit::Test, &[1, 3], None)
                .unwrap()
                .to_json(),
            a.to_json()
        );
    }
    assert_eq!(a.users, 3);
    // every user sees tied scores, so ranks follow item ids after masking
    assert_eq!(a.recall_at(3).unwrap(), 2.0 / 3.0);
    assert_eq!(a.recall_at(1).unwrap(), 0.0);
}

#[test]
fn invalid_inputs_are_rejected() {
    let store = InteractionStore::from_splits(2, 3, vec![(0, 0)], vec![], vec![(1, 1)]).unwrap();
    let (u, v) = embeddings(&[1.0, 1.0], &[0.0, 1.0, 2.0]);
    assert!(evaluate(&u, &v, &store, EvalSplit::Test, &[], None).is_err());
    assert!(evaluate(&u, &v, &store, EvalSplit::Test, &[0], None).is_err());
    assert!(evaluate(
        &u,
        &DenseMatrix::zeros(2, 1),
        &store,
        EvalSplit::Test,
        &[1],
        None
    )
    .is_err());
}
