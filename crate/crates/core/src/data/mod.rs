//! Interaction and social-graph stores, loading, splitting, noise injection
//! and sparsity bucketing.

mod io;
mod noise;

pub use io::{
    load_dataset, read_snapshot, write_snapshot, LoadStats, LoadedDataset, SnapshotManifest,
};
pub use noise::{inject_noise, NoisyGraph};

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type UserId = u32;
pub type ItemId = u32;

/// Dense id → raw id lookup, persisted next to every snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IdMap {
    pub users: Vec<i64>,
    pub items: Vec<i64>,
}

/// Positive interactions before splitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interactions {
    pub num_users: usize,
    pub num_items: usize,
    pub pairs: Vec<(UserId, ItemId)>,
}

/// Indexed interactions split into train / validation / test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionStore {
    pub num_users: usize,
    pub num_items: usize,
    pub train: Vec<(UserId, ItemId)>,
    pub validation: Vec<(UserId, ItemId)>,
    pub test: Vec<(UserId, ItemId)>,
    /// Train interaction count per user.
    pub user_degree: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Validation,
    Test,
}

impl InteractionStore {
    /// Builds a store from explicit splits, checking every invariant.
    pub fn from_splits(
        num_users: usize,
        num_items: usize,
        mut train: Vec<(UserId, ItemId)>,
        mut validation: Vec<(UserId, ItemId)>,
        mut test: Vec<(UserId, ItemId)>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, split) in [
            ("train", &mut train),
            ("validation", &mut validation),
            ("test", &mut test),
        ] {
            split.sort_unstable();
            for &(u, i) in split.iter() {
                if u as usize >= num_users || i as usize >= num_items {
                    return Err(Error::Argument(format!(
                        "{name} pair ({u}, {i}) outside {num_users}x{num_items}"
                    )));
                }
                if !seen.insert((u, i)) {
                    return Err(Error::Argument(format!(
                        "pair ({u}, {i}) appears twice across splits"
                    )));
                }
            }
        }
        let mut user_degree = vec![0u32; num_users];
        for &(u, _) in &train {
            user_degree[u as usize] += 1;
        }
        Ok(Self {
            num_users,
            num_items,
            train,
            validation,
            test,
            user_degree,
        })
    }

    pub fn split(&self, which: EvalSplit) -> &[(UserId, ItemId)] {
        match which {
            EvalSplit::Validation => &self.validation,
            EvalSplit::Test => &self.test,
        }
    }

    /// Per-user sorted item lists for a slice of pairs.
    pub fn items_by_user(&self, pairs: &[(UserId, ItemId)]) -> Vec<Vec<ItemId>> {
        let mut out = vec![Vec::new(); self.num_users];
        for &(u, i) in pairs {
            out[u as usize].push(i);
        }
        for items in &mut out {
            items.sort_unstable();
        }
        out
    }

    pub fn train_items(&self) -> Vec<Vec<ItemId>> {
        self.items_by_user(&self.train)
    }
}

/// Directed user → user relations in canonical (src, dst) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SocialGraph {
    num_users: usize,
    edges: Vec<(UserId, UserId)>,
}

impl SocialGraph {
    /// Sorts, removes duplicates and self-loops. Endpoints must be `< num_users`.
    pub fn from_edges(num_users: usize, mut edges: Vec<(UserId, UserId)>) -> Result<Self> {
        if let Some(&(a, b)) = edges
            .iter()
            .find(|&&(a, b)| a as usize >= num_users || b as usize >= num_users)
        {
            return Err(Error::Argument(format!(
                "social edge ({a}, {b}) outside {num_users} users"
            )));
        }
        edges.retain(|&(a, b)| a != b);
        edges.sort_unstable();
        edges.dedup();
        Ok(Self { num_users, edges })
    }

    pub fn empty(num_users: usize) -> Self {
        Self {
            num_users,
            edges: Vec::new(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn edges(&self) -> &[(UserId, UserId)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Adds the reverse of every edge.
    pub fn symmetrized(&self) -> Self {
        let mut edges = self.edges.clone();
        edges.extend(self.edges.iter().map(|&(a, b)| (b, a)));
        edges.sort_unstable();
        edges.dedup();
        Self {
            num_users: self.num_users,
            edges,
        }
    }

    pub fn contains(&self, a: UserId, b: UserId) -> bool {
        self.edges.binary_search(&(a, b)).is_ok()
    }
}

/// Fractions and seed for the global random split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            val_frac: 0.0,
            seed: 0,
        }
    }
}

/// Global random permutation split: the first `round(train_frac·n)` pairs go
/// to train, the next `round(val_frac·n)` to validation, the rest to test.
pub fn split(data: &Interactions, cfg: &SplitConfig) -> Result<InteractionStore> {
    let SplitConfig {
        train_frac,
        val_frac,
        seed,
    } = *cfg;
    if !(train_frac > 0.0 && train_frac <= 1.0) {
        return Err(Error::Config(format!(
            "train_frac {train_frac} outside (0, 1]"
        )));
    }
    if !(0.0..1.0).contains(&val_frac) {
        return Err(Error::Config(format!("val_frac {val_frac} outside [0, 1)")));
    }
    if train_frac + val_frac > 1.0 + 1e-12 {
        return Err(Error::Config(format!(
            "train_frac + val_frac = {} exceeds 1",
            train_frac + val_frac
        )));
    }
    let mut order = data.pairs.clone();
    order.sort_unstable();
    order.dedup();
    let n = order.len();
    let n_train = ((train_frac * n as f64).round() as usize).min(n);
    let n_val = ((val_frac * n as f64).round() as usize).min(n - n_train);
    order.shuffle(&mut rng::stream(seed, rng::tag::SPLIT, &[]));

    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    InteractionStore::from_splits(data.num_users, data.num_items, order, validation, test)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sparsity {
    Low,
    Medium,
    High,
}

impl Sparsity {
    pub const ALL: [Sparsity; 3] = [Sparsity::Low, Sparsity::Medium, Sparsity::High];

    pub fn name(self) -> &'static str {
        match self {
            Sparsity::Low => "low",
            Sparsity::Medium => "medium",
            Sparsity::High => "high",
        }
    }
}

/// Tercile assignment of every user by train degree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityBuckets {
    pub assignment: Vec<Sparsity>,
}

impl SparsityBuckets {
    pub fn size(&self, bucket: Sparsity) -> usize {
        self.assignment.iter().filter(|&&b| b == bucket).count()
    }
}

/// Users sorted by (train degree, user id) and cut into three consecutive
/// groups. With `n = 3q + r`, the first `r` groups get `q + 1` users, so
/// Low is never smaller than Medium, which is never smaller than High.
pub fn bucket_by_sparsity(store: &InteractionStore) -> SparsityBuckets {
    let n = store.num_users;
    let mut users: Vec<usize> = (0..n).collect();
    users.sort_by_key(|&u| (store.user_degree[u], u));
    let (q, r) = (n / 3, n % 3);
    let mut assignment = vec![Sparsity::Low; n];
    let mut pos = 0;
    for (g, bucket) in Sparsity::ALL.into_iter().enumerate() {
        let size = q + usize::from(g < r);
        for &u in &users[pos..pos + size] {
            assignment[u] = bucket;
        }
        pos += size;
    }
    SparsityBuckets { assignment }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(n: u32) -> Interactions {
        Interactions {
            num_users: 10,
            num_items: 10,
            pairs: (0..n).map(|k| (k / 10, k % 10)).collect(),
        }
    }

    #[test]
    fn split_exact_fraction() {
        let s = split(
            &pairs(100),
            &SplitConfig {
                train_frac: 0.8,
                val_frac: 0.0,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (80, 0, 20)
        );
    }

    #[test]
    fn split_with_validation_is_disjoint() {
        let s = split(
            &pairs(100),
            &SplitConfig {
                train_frac: 0.8,
                val_frac: 0.1,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (80, 10, 10)
        );
        let tr: HashSet<_> = s.train.iter().collect();
        let va: HashSet<_> = s.validation.iter().collect();
        let te: HashSet<_> = s.test.iter().collect();
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        assert_eq!(tr.len() + va.len() + te.len(), 100);
    }

    #[test]
    fn split_determinism_and_seed_sensitivity() {
        let cfg = SplitConfig {
            train_frac: 0.8,
            val_frac: 0.0,
            seed: 11,
        };
        let a = split(&pairs(100), &cfg).unwrap();
        let b = split(&pairs(100), &cfg).unwrap();
        assert_eq!(a, b);
        let c = split(&pairs(100), &SplitConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.test, c.test);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        for (t, v) in [(0.0, 0.0), (1.2, 0.0), (0.8, 0.3), (0.5, -0.1)] {
            let err = split(
                &pairs(10),
                &SplitConfig {
                    train_frac: t,
                    val_frac: v,
                    seed: 0,
                },
            );
            assert!(matches!(err, Err(Error::Config(_))), "{t} {v}");
        }
    }

    #[test]
    fn user_degree_counts_train_pairs() {
        let s = split(&pairs(100), &SplitConfig::default()).unwrap();
        for u in 0..10u32 {
            let c = s.train.iter().filter(|p| p.0 == u).count() as u32;
            assert_eq!(s.user_degree[u as usize], c);
        }
    }

    fn store_with_degrees(degrees: &[u32]) -> InteractionStore {
        let mut train = Vec::new();
        for (u, &d) in degrees.iter().enumerate() {
            for i in 0..d {
                train.push((u as u32, i));
            }
        }
        InteractionStore::from_splits(degrees.len(), 16, train, vec![], vec![]).unwrap()
    }

    #[test]
    fn buckets_one_each() {
        let b = bucket_by_sparsity(&store_with_degrees(&[3, 1, 2]));
        assert_eq!(
            b.assignment,
            vec![Sparsity::High, Sparsity::Low, Sparsity::Medium]
        );
    }

    #[test]
    fn buckets_tie_break_by_user_id() {
        let b = bucket_by_sparsity(&store_with_degrees(&[2; 9]));
        let expect: Vec<_> = (0..9).map(|u| Sparsity::ALL[u / 3]).collect();
        assert_eq!(b.assignment, expect);
    }

    #[test]
    fn buckets_ten_users_low_largest() {
        let b = bucket_by_sparsity(&store_with_degrees(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]));
        let sizes: Vec<_> = Sparsity::ALL.iter().map(|&s| b.size(s)).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert_eq!(&b.assignment[..4], &[Sparsity::Low; 4]);
    }

    #[test]
    fn social_graph_canonicalizes() {
        let g = SocialGraph::from_edges(4, vec![(2, 1), (0, 3), (1, 1), (2, 1), (0, 1)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 3), (2, 1)]);
        assert!(SocialGraph::from_edges(2, vec![(0, 2)]).is_err());
        assert_eq!(g.symmetrized().len(), 6);
    }
}
