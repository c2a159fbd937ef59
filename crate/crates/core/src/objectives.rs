//! Loss functions and regularizers.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{InteractionStore, ItemId, SocialGraph, UserId};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Tape, Var};

/// Positive pairs of one training step together with the in-batch candidate
/// items (the sorted unique items of the batch).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub pairs: Vec<(UserId, ItemId)>,
    pub candidates: Vec<ItemId>,
    /// Position of each pair's item inside `candidates`.
    pub targets: Vec<usize>,
}

impl Batch {
    pub fn new(pairs: Vec<(UserId, ItemId)>) -> Self {
        let candidates: Vec<ItemId> = pairs
            .iter()
            .map(|&(_, i)| i)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pos: HashMap<ItemId, usize> = candidates
            .iter()
            .enumerate()
            .map(|(k, &i)| (i, k))
            .collect();
        let targets = pairs.iter().map(|(_, i)| pos[i]).collect();
        Self {
            pairs,
            candidates,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// In-batch sampled softmax with scaled cosine scores:
/// `−(1/B) Σ log[ exp(cos(p_a, q_i)/τ) / Σ_{j ∈ batch items} exp(cos(p_a, q_j)/τ) ]`.
///
/// With `mask` set, each pair's other known positives (`mask[a]`, sorted) are
/// removed from its candidate set.
pub fn erm_softmax_loss(
    tape: &mut Tape,
    users: Var,
    items: Var,
    batch: &Batch,
    tau: f64,
    mask: Option<&[Vec<ItemId>]>,
) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!(
            "softmax temperature {tau} must be > 0"
        )));
    }
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let p = tape.gather_rows(
        users,
        batch.pairs.iter().map(|&(a, _)| a as usize).collect(),
    )?;
    let q = tape.gather_rows(
        items,
        batch.candidates.iter().map(|&i| i as usize).collect(),
    )?;
    let p = tape.row_normalize(p);
    let q = tape.row_normalize(q);
    let cos = tape.matmul_t(p, q)?;
    let mut logits = tape.scale(cos, 1.0 / tau);
    if let Some(known) = mask {
        let mut m = DenseMatrix::zeros(batch.len(), batch.candidates.len());
        for (r, (&(a, _), &t)) in batch.pairs.iter().zip(&batch.targets).enumerate() {
            for (c, item) in batch.candidates.iter().enumerate() {
                if c != t && known[a as usize].binary_search(item).is_ok() {
                    m.set(r, c, -1e9);
                }
            }
        }
        let m = tape.leaf(m);
        logits = tape.add(logits, m)?;
    }
    tape.softmax_xent(logits, batch.targets.clone())
}

/// Convenience evaluation of [`erm_softmax_loss`] on plain matrices.
pub fn erm_softmax_loss_value(
    users: &DenseMatrix,
    items: &DenseMatrix,
    batch: &Batch,
    tau: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let u = tape.leaf(users.clone());
    let i = tape.leaf(items.clone());
    let l = erm_softmax_loss(&mut tape, u, i, batch, tau, None)?;
    Ok(tape.scalar(l))
}

/// `−Σ log σ(⟨p_a,q_i⟩ − ⟨p_a,q_j⟩) + λ Σ ‖E⁰‖²` over `(a, i, j)` triples.
pub fn bpr_loss(
    tape: &mut Tape,
    users: Var,
    items: Var,
    triples: &[(UserId, ItemId, ItemId)],
    regularization: Option<(f64, &[Var])>,
) -> Result<Var> {
    let pa = tape.gather_rows(users, triples.iter().map(|t| t.0 as usize).collect())?;
    let qi = tape.gather_rows(items, triples.iter().map(|t| t.1 as usize).collect())?;
    let qj = tape.gather_rows(items, triples.iter().map(|t| t.2 as usize).collect())?;
    let si = tape.row_dot(pa, qi)?;
    let sj = tape.row_dot(pa, qj)?;
    let diff = tape.combine(vec![(si, 1.0), (sj, -1.0)])?;
    let mut loss = tape.neg_log_sigmoid_sum(diff);
    if let Some((lambda, tables)) = regularization {
        let mut terms = vec![(loss, 1.0)];
        for &t in tables {
            let sq = tape.sum_squares(t);
            terms.push((sq, lambda));
        }
        loss = tape.combine(terms)?;
    }
    Ok(loss)
}

/// Point-wise log loss: positives pushed to `σ(s) → 1`, sampled negatives to
/// `σ(s) → 0`, averaged over all scored pairs. Kept for ablations only.
pub fn pointwise_loss(
    tape: &mut Tape,
    users: Var,
    items: Var,
    triples: &[(UserId, ItemId, ItemId)],
) -> Result<Var> {
    let pa = tape.gather_rows(users, triples.iter().map(|t| t.0 as usize).collect())?;
    let qi = tape.gather_rows(items, triples.iter().map(|t| t.1 as usize).collect())?;
    let qj = tape.gather_rows(items, triples.iter().map(|t| t.2 as usize).collect())?;
    let si = tape.row_dot(pa, qi)?;
    let sj = tape.row_dot(pa, qj)?;
    let neg = tape.scale(sj, -1.0);
    let lp = tape.neg_log_sigmoid_sum(si);
    let ln = tape.neg_log_sigmoid_sum(neg);
    let n = 2.0 * triples.len() as f64;
    tape.combine(vec![(lp, 1.0 / n), (ln, 1.0 / n)])
}

/// For each `(a, i)` draws one item uniformly among those `a` has not
/// interacted with in `known` (sorted per user).
pub fn sample_negatives(
    pairs: &[(UserId, ItemId)],
    known: &[Vec<ItemId>],
    num_items: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(UserId, ItemId, ItemId)>> {
    pairs
        .iter()
        .map(|&(a, i)| {
            let seen = &known[a as usize];
            if seen.len() >= num_items {
                return Err(Error::Argument(format!(
                    "user {a} has interacted with every item"
                )));
            }
            loop {
                let j = rng.random_range(0..num_items) as ItemId;
                if seen.binary_search(&j).is_err() {
                    return Ok((a, i, j));
                }
            }
        })
        .collect()
}

/// Per-environment losses and their invariance-penalized combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub per_env: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub total: f64,
}

/// `mean + β · Var` over the environment losses (population variance).
pub fn invariance_objective(per_env: &[f64], beta: f64) -> Result<LossBreakdown> {
    if per_env.is_empty() {
        return Err(Error::Argument(
            "invariance objective needs at least one environment".into(),
        ));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = per_env
        .iter()
        .map(|&l| tape.leaf(DenseMatrix::scalar(l)))
        .collect();
    let (total, mean, variance) = invariance_on_tape(&mut tape, &vars, beta)?;
    Ok(LossBreakdown {
        per_env: per_env.to_vec(),
        mean: tape.scalar(mean),
        variance: tape.scalar(variance),
        total: tape.scalar(total),
    })
}

/// Tape form of [`invariance_objective`]; returns `(total, mean, variance)`.
pub fn invariance_on_tape(tape: &mut Tape, losses: &[Var], beta: f64) -> Result<(Var, Var, Var)> {
    if !(beta >= 0.0) {
        return Err(Error::Config(format!(
            "invariance weight {beta} must be >= 0"
        )));
    }
    let k = losses.len() as f64;
    let mean = tape.combine(losses.iter().map(|&l| (l, 1.0 / k)).collect())?;
    let variance = tape.variance(losses.to_vec())?;
    let total = tape.combine(vec![(mean, 1.0), (variance, beta)])?;
    Ok((total, mean, variance))
}

/// Empirical HSIC `(n−1)⁻² Tr(K_X H K_Y H)` with RBF kernels
/// `exp(−‖x_i − x_j‖² / (2σ²))` and centering `H = I − 11ᵀ/n`.
pub fn hsic_rbf(x: &DenseMatrix, y: &DenseMatrix, sigma: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let yv = tape.leaf(y.clone());
    let h = tape.hsic(xv, yv, sigma)?;
    Ok(tape.scalar(h))
}

/// `|A ∩ B| / |A ∪ B|` of two sorted item lists; 0 when both are empty.
pub fn jaccard(a: &[ItemId], b: &[ItemId]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Keeps the relations whose endpoints' train item sets have Jaccard
/// similarity `>= threshold`.
pub fn rule_based_filter(
    social: &SocialGraph,
    store: &InteractionStore,
    threshold: f64,
) -> SocialGraph {
    let items = store.train_items();
    let kept = social
        .edges()
        .iter()
        .copied()
        .filter(|&(a, b)| jaccard(&items[a as usize], &items[b as usize]) >= threshold)
        .collect();
    SocialGraph::from_edges(social.num_users(), kept).expect("subset of a valid graph")
}

/// `C · p / (1 − p)` with `p = σ(score)`; equals `C · exp(score)` for a log-odds score.
pub fn density_ratio(score: f64, negative_ratio: f64) -> f64 {
    negative_ratio * score.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_candidate_loss_is_zero() {
        let users = DenseMatrix::from_rows(&[vec![0.3, -0.2]]).unwrap();
        let items = DenseMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let l = erm_softmax_loss_value(&users, &items, &Batch::new(vec![(0, 0)]), 0.2).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn equal_scores_give_ln2() {
        let users = DenseMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        // both items orthogonal to the user
        let items = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, -3.0]]).unwrap();
        let b = Batch::new(vec![(0, 0), (0, 1)]);
        let l = erm_softmax_loss_value(&users, &items, &b, 0.2).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_rows_are_guarded() {
        let users = DenseMatrix::zeros(1, 3);
        let items = DenseMatrix::zeros(2, 3);
        let l =
            erm_softmax_loss_value(&users, &items, &Batch::new(vec![(0, 0), (0, 1)]), 0.2).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn in_batch_mask_removes_other_positives() {
        let users = DenseMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let items = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, -3.0]]).unwrap();
        let b = Batch::new(vec![(0, 0), (0, 1)]);
        let known = vec![vec![0, 1]];
        let mut tape = Tape::new();
        let u = tape.leaf(users);
        let i = tape.leaf(items);
        let l = erm_softmax_loss(&mut tape, u, i, &b, 0.2, Some(&known)).unwrap();
        assert!(tape.scalar(l).abs() < 1e-12);
    }

    #[test]
    fn bpr_identical_items_is_ln2_per_triple() {
        let mut tape = Tape::new();
        let u = tape.leaf(DenseMatrix::from_rows(&[vec![0.4, 0.9]]).unwrap());
        let i = tape.leaf(DenseMatrix::from_rows(&[vec![0.1, 0.2], vec![0.1, 0.2]]).unwrap());
        let l = bpr_loss(&mut tape, u, i, &[(0, 0, 1), (0, 1, 0), (0, 0, 1)], None).unwrap();
        assert!((tape.scalar(l) - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bpr_saturates_to_regularizer() {
        let mut tape = Tape::new();
        let u = tape.leaf(DenseMatrix::from_rows(&[vec![1e3]]).unwrap());
        let i = tape.leaf(DenseMatrix::from_rows(&[vec![1e3], vec![-1e3]]).unwrap());
        let l = bpr_loss(&mut tape, u, i, &[(0, 0, 1)], Some((1e-4, &[u, i]))).unwrap();
        let reg = 1e-4 * (1e6 + 2e6);
        assert!((tape.scalar(l) - reg).abs() < 1e-9);
    }

    #[test]
    fn invariance_arithmetic() {
        let b = invariance_objective(&[0.5, 0.5, 0.5], 3.0).unwrap();
        assert_eq!((b.variance, b.total), (0.0, 0.5));
        let b = invariance_objective(&[0.0, 1.0], 0.15).unwrap();
        assert_eq!((b.mean, b.variance), (0.5, 0.25));
        assert!((b.total - 0.5375).abs() < 1e-15);
        let b = invariance_objective(&[0.8123], 10.0).unwrap();
        assert_eq!((b.variance, b.total), (0.0, 0.8123));
    }

    #[test]
    fn hsic_of_constant_is_exactly_zero() {
        let x = DenseMatrix::from_fn(5, 2, |_, c| c as f64 + 0.5);
        let y = DenseMatrix::from_fn(5, 3, |r, c| (r * c) as f64 * 0.3);
        assert_eq!(hsic_rbf(&x, &y, 1.0).unwrap(), 0.0);
        assert!(hsic_rbf(&y, &y, 1.0).unwrap() > 0.0);
        assert!(hsic_rbf(&DenseMatrix::zeros(1, 2), &DenseMatrix::zeros(1, 2), 1.0).is_err());
        assert!(hsic_rbf(&y, &y, 0.0).is_err());
    }

    #[test]
    fn density_ratio_matches_exponential() {
        for (f, c) in [(0.3, 5.0), (-2.0, 100.0), (4.0, 0.5)] {
            let want: f64 = c * f64::exp(f);
            assert!((density_ratio(f, c) - want).abs() / want < 1e-12);
        }
    }

    #[test]
    fn negatives_avoid_known_items() {
        let known = vec![vec![0, 1, 2]];
        let mut rng = crate::rng::stream(0, "neg", &[]);
        let t = sample_negatives(&[(0, 0); 50], &known, 5, &mut rng).unwrap();
        assert!(t.iter().all(|&(_, _, j)| j >= 3));
        assert!(sample_negatives(&[(0, 0)], &known, 3, &mut rng).is_err());
    }
}
