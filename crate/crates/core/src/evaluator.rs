//! Full-ranking Recall@N / NDCG@N evaluation.
//!
//! Every item a user has not interacted with in training is a candidate.
//! Scores are ranked in descending order with ties broken by ascending item
//! id, so results never depend on sort stability or thread count.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    inject_noise, EvalSplit, InteractionStore, ItemId, SocialGraph, Sparsity, SparsityBuckets,
};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::trainer::{train, NoopObserver, TrainConfig};

pub const DEFAULT_CUTOFFS: [usize; 2] = [10, 20];

/// Recall and NDCG of one user at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub users: usize,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: EvalSplit,
    pub users: usize,
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_bucket: BTreeMap<String, BucketMetrics>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn ndcg_at(&self, n: usize) -> Option<f64> {
        self.ndcg.get(&n).copied()
    }

    pub fn recall_at(&self, n: usize) -> Option<f64> {
        self.recall.get(&n).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Aligned columns: one row for all users plus one per bucket.
    pub fn to_text(&self) -> String {
        let cutoffs: Vec<usize> = self.recall.keys().copied().collect();
        let mut header = format!("{:<10} {:>7}", "group", "users");
        for n in &cutoffs {
            header.push_str(&format!(
                " {:>10} {:>10}",
                format!("Recall@{n}"),
                format!("NDCG@{n}")
            ));
        }
        let mut out = header + "\n";
        let mut row =
            |name: &str, users: usize, r: &BTreeMap<usize, f64>, d: &BTreeMap<usize, f64>| {
                let _ = write!(out, "{name:<10} {users:>7}");
                for n in &cutoffs {
                    let _ = write!(out, " {:>10.6} {:>10.6}", r[n], d[n]);
                }
                out.push('\n');
            };
        row("all", self.users, &self.recall, &self.ndcg);
        for (name, b) in &self.per_bucket {
            row(name, b.users, &b.recall, &b.ndcg);
        }
        out
    }
}

/// `1 / log2(rank + 1)` for a 1-based rank.
fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Orders `(score, item)` pairs best first.
fn rank_cmp(a: &(f64, ItemId), b: &(f64, ItemId)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Top `n` items by score, skipping `excluded` (sorted).
pub fn top_n(scores: &[f64], excluded: &[ItemId], n: usize) -> Vec<ItemId> {
    let mut cand: Vec<(f64, ItemId)> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, i as ItemId))
        .filter(|(_, i)| excluded.binary_search(i).is_err())
        .collect();
    if n < cand.len() {
        cand.select_nth_unstable_by(n, rank_cmp);
        cand.truncate(n);
    }
    cand.sort_unstable_by(rank_cmp);
    cand.into_iter().map(|(_, i)| i).collect()
}

/// Recall and NDCG at each cutoff for one ranked list against a sorted test set.
pub fn metrics_from_ranking(
    ranked: &[ItemId],
    test: &[ItemId],
    cutoffs: &[usize],
) -> Vec<UserMetrics> {
    cutoffs
        .iter()
        .map(|&n| {
            let mut hits = 0usize;
            let mut dcg = 0.0;
            for (r, item) in ranked.iter().take(n).enumerate() {
                if test.binary_search(item).is_ok() {
                    hits += 1;
                    dcg += discount(r + 1);
                }
            }
            let idcg: f64 = (1..=n.min(test.len())).map(discount).sum();
            UserMetrics {
                recall: hits as f64 / test.len() as f64,
                ndcg: dcg / idcg,
            }
        })
        .collect()
}

/// Ranks one user's scores and scores the list. `None` when `test` is empty.
pub fn rank_and_score(
    scores: &[f64],
    excluded: &[ItemId],
    test: &[ItemId],
    cutoffs: &[usize],
) -> Option<Vec<UserMetrics>> {
    if test.is_empty() {
        return None;
    }
    let depth = cutoffs.iter().copied().max().unwrap_or(0);
    Some(metrics_from_ranking(
        &top_n(scores, excluded, depth),
        test,
        cutoffs,
    ))
}

/// Per-user metrics for every user with a nonempty held-out set, in user order.
///
/// Candidates exclude the user's train items and the items of the other
/// held-out split.
pub fn evaluate_per_user(
    users: &DenseMatrix,
    items: &DenseMatrix,
    store: &InteractionStore,
    split: EvalSplit,
    cutoffs: &[usize],
) -> Result<Vec<(usize, Vec<UserMetrics>)>> {
    if users.rows() != store.num_users
        || items.rows() != store.num_items
        || users.cols() != items.cols()
    {
        return Err(Error::shape(
            "evaluate",
            format!(
                "embeddings {:?}/{:?} for {} users, {} items",
                users.shape(),
                items.shape(),
                store.num_users,
                store.num_items
            ),
        ));
    }
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::Argument(
            "cutoffs must be nonempty and positive".into(),
        ));
    }
    let other = match split {
        EvalSplit::Test => EvalSplit::Validation,
        EvalSplit::Validation => EvalSplit::Test,
    };
    let held = store.items_by_user(store.split(split));
    let train = store.train_items();
    let other = store.items_by_user(store.split(other));
    let per_user: Vec<Option<(usize, Vec<UserMetrics>)>> = (0..store.num_users)
        .into_par_iter()
        .map(|u| {
            if held[u].is_empty() {
                return None;
            }
            let mut excluded = [train[u].as_slice(), other[u].as_slice()].concat();
            excluded.sort_unstable();
            let scores = items.mat_vec(users.row(u));
            rank_and_score(&scores, &excluded, &held[u], cutoffs).map(|m| (u, m))
        })
        .collect();
    Ok(per_user.into_iter().flatten().collect())
}

fn average(
    rows: &[&Vec<UserMetrics>],
    cutoffs: &[usize],
) -> (BTreeMap<usize, f64>, BTreeMap<usize, f64>) {
    let mut recall = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    for (c, &n) in cutoffs.iter().enumerate() {
        let k = rows.len().max(1) as f64;
        recall.insert(n, rows.iter().map(|m| m[c].recall).sum::<f64>() / k);
        ndcg.insert(n, rows.iter().map(|m| m[c].ndcg).sum::<f64>() / k);
    }
    (recall, ndcg)
}

/// Macro-averaged report, optionally broken down by sparsity bucket.
pub fn evaluate(
    users: &DenseMatrix,
    items: &DenseMatrix,
    store: &InteractionStore,
    split: EvalSplit,
    cutoffs: &[usize],
    buckets: Option<&SparsityBuckets>,
) -> Result<EvalReport> {
    let rows = evaluate_per_user(users, items, store, split, cutoffs)?;
    let all: Vec<&Vec<UserMetrics>> = rows.iter().map(|(_, m)| m).collect();
    let (recall, ndcg) = average(&all, cutoffs);
    let mut per_bucket = BTreeMap::new();
    if let Some(b) = buckets {
        for bucket in Sparsity::ALL {
            let sel: Vec<&Vec<UserMetrics>> = rows
                .iter()
                .filter(|(u, _)| b.assignment[*u] == bucket)
                .map(|(_, m)| m)
                .collect();
            let (recall, ndcg) = average(&sel, cutoffs);
            per_bucket.insert(
                bucket.name().to_string(),
                BucketMetrics {
                    users: sel.len(),
                    recall,
                    ndcg,
                },
            );
        }
    }
    Ok(EvalReport {
        split,
        users: rows.len(),
        recall,
        ndcg,
        per_bucket,
        config: BTreeMap::new(),
    })
}

/// `(score − base) / base`; 0 when `base` is 0.
pub fn relative_gain(score: f64, base: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        (score - base) / base
    }
}

/// Cutoff reported by the sweeps.
pub const SWEEP_CUTOFF: usize = 20;

/// One row of a noise-robustness sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub ratio: f64,
    pub model: String,
    pub ndcg: f64,
    /// Relative NDCG gain over the backbone trained on the same graph.
    pub gain: f64,
}

fn best_test_ndcg(
    config: TrainConfig,
    store: &InteractionStore,
    social: &SocialGraph,
) -> Result<f64> {
    let mut config = config;
    if !config.cutoffs.contains(&SWEEP_CUTOFF) {
        config.cutoffs.push(SWEEP_CUTOFF);
        config.cutoffs.sort_unstable();
    }
    let (t, _) = train(config, store.clone(), social.clone(), &mut NoopObserver)?;
    let report = t.evaluate_best(EvalSplit::Test, None)?;
    Ok(report
        .ndcg_at(SWEEP_CUTOFF)
        .expect("sweep cutoff evaluated"))
}

/// Trains the backbone and `config` on the social graph with each ratio of
/// fake relations injected (stream `(noise_seed, inject)`).
pub fn noise_sweep(
    config: &TrainConfig,
    store: &InteractionStore,
    social: &SocialGraph,
    ratios: &[f64],
    noise_seed: u64,
) -> Result<Vec<NoiseRow>> {
    let mut rows = Vec::with_capacity(2 * ratios.len());
    for &ratio in ratios {
        let noisy = inject_noise(social, ratio, noise_seed)?.graph;
        let mut backbone = config.clone();
        backbone.no_env_gen = true;
        let base = best_test_ndcg(backbone, store, &noisy)?;
        let full = best_test_ndcg(config.clone(), store, &noisy)?;
        rows.push(NoiseRow {
            ratio,
            model: "backbone".into(),
            ndcg: base,
            gain: 0.0,
        });
        rows.push(NoiseRow {
            ratio,
            model: "sgil".into(),
            ndcg: full,
            gain: relative_gain(full, base),
        });
    }
    Ok(rows)
}

/// One cell of a `K × β` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub k: usize,
    pub beta: f64,
    pub ndcg: f64,
}

/// One training run per `(K, β)` pair, in row-major order.
pub fn sensitivity_grid(
    config: &TrainConfig,
    store: &InteractionStore,
    social: &SocialGraph,
    ks: &[usize],
    betas: &[f64],
) -> Result<Vec<GridCell>> {
    let mut cells = Vec::with_capacity(ks.len() * betas.len());
    for &k in ks {
        for &beta in betas {
            let mut c = config.clone();
            c.k = k;
            c.beta = beta;
            c.validate()?;
            cells.push(GridCell {
                k,
                beta,
                ndcg: best_test_ndcg(c, store, social)?,
            });
        }
    }
    Ok(cells)
}

pub fn noise_sweep_csv(rows: &[NoiseRow]) -> String {
    let mut out = format!("ratio,model,ndcg@{SWEEP_CUTOFF},gain\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.ratio, r.model, r.ndcg, r.gain);
    }
    out
}

/// Long format, one line per cell.
pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut out = format!("k,beta,ndcg@{SWEEP_CUTOFF}\n");
    for c in cells {
        let _ = writeln!(out, "{},{},{}", c.k, c.beta, c.ndcg);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking() {
        let scores = [0.9, 0.8, 0.7, 0.1, 0.0];
        let m = rank_and_score(&scores, &[], &[0, 1, 2], &[10]).unwrap();
        assert_eq!(
            m[0],
            UserMetrics {
                recall: 1.0,
                ndcg: 1.0
            }
        );
    }

    #[test]
    fn no_hits() {
        let m = rank_and_score(&[0.0, 1.0, 2.0], &[], &[0], &[1]).unwrap();
        assert_eq!(
            m[0],
            UserMetrics {
                recall: 0.0,
                ndcg: 0.0
            }
        );
    }

    #[test]
    fn hits_at_one_and_three() {
        let scores = [5.0, 4.0, 3.0, 2.0, 1.0];
        let m = rank_and_score(&scores, &[], &[0, 2], &[5]).unwrap();
        let want = (1.0 + 1.0 / 4f64.log2()) / (1.0 + 1.0 / 3f64.log2());
        assert_eq!(m[0].recall, 1.0);
        assert!((m[0].ndcg - want).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_item_id() {
        assert_eq!(top_n(&[1.0, 1.0, 1.0, 2.0], &[], 3), vec![3, 0, 1]);
        assert_eq!(top_n(&[1.0, 1.0, 1.0, 2.0], &[0, 3], 5), vec![1, 2]);
    }

    #[test]
    fn empty_test_is_skipped() {
        assert!(rank_and_score(&[1.0], &[], &[], &[10]).is_none());
    }

    #[test]
    fn text_report_has_a_row_per_group() {
        let store = InteractionStore::from_splits(2, 3, vec![(0, 0)], vec![], vec![(0, 1), (1, 2)])
            .unwrap();
        let users = DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let items = DenseMatrix::from_rows(&[vec![3.0], vec![2.0], vec![1.0]]).unwrap();
        let buckets = crate::data::bucket_by_sparsity(&store);
        let r = evaluate(
            &users,
            &items,
            &store,
            EvalSplit::Test,
            &[1, 2],
            Some(&buckets),
        )
        .unwrap();
        assert_eq!(r.users, 2);
        // user 0: train item 0 masked, item 1 first; user 1: item 2 ranked third
        assert_eq!(r.recall[&1], 0.5);
        assert_eq!(r.to_text().lines().count(), 5);
    }
}
