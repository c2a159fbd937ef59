//! LightGCN propagation over the joint user, item and social graph.
//!
//! Node ids: users occupy `0..M`, items `M..M+N`. The adjacency has the
//! block layout `[S, R; Rᵀ, 0]` with the social block kept directed.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{ItemId, SocialGraph, UserId};
use crate::error::{Error, Result};
use crate::numerics::{CsrMatrix, CsrPattern, DenseMatrix, Tape, Var};

/// Layer-0 user and item embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    pub users: DenseMatrix,
    pub items: DenseMatrix,
}

impl EmbeddingTables {
    /// Entries drawn from `N(0, 0.01²)`.
    pub fn init(num_users: usize, num_items: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.01).unwrap();
        Self {
            users: DenseMatrix::from_fn(num_users, dim, |_, _| normal.sample(rng)),
            items: DenseMatrix::from_fn(num_items, dim, |_, _| normal.sample(rng)),
        }
    }

    pub fn dim(&self) -> usize {
        self.users.cols()
    }
}

/// Readout of a propagation: mean over layers `0..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationOutput {
    pub users: DenseMatrix,
    pub items: DenseMatrix,
    /// `E^0..E^L` over all nodes, kept only on request.
    pub layers: Option<Vec<DenseMatrix>>,
}

/// Fixed structure of the heterogeneous graph. Social entries get their
/// weights per environment; interaction entries are always 1.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    pattern: Arc<CsrPattern>,
    num_users: usize,
    num_items: usize,
    social_positions: Vec<usize>,
    base_weights: Vec<f64>,
}

impl HeteroGraph {
    pub fn new(
        social: &SocialGraph,
        interactions: &[(UserId, ItemId)],
        num_users: usize,
        num_items: usize,
    ) -> Result<Self> {
        let m = num_users as u32;
        if social.num_users() != num_users {
            return Err(Error::Construction(format!(
                "social graph has {} users, store has {num_users}",
                social.num_users()
            )));
        }
        let mut entries = Vec::with_capacity(social.len() + 2 * interactions.len());
        for &(a, b) in social.edges() {
            if a >= m || b >= m {
                return Err(Error::Construction(format!(
                    "social edge ({a}, {b}) outside user block"
                )));
            }
            entries.push((a, b));
        }
        for &(u, i) in interactions {
            if u >= m || i as usize >= num_items {
                return Err(Error::Construction(format!(
                    "interaction ({u}, {i}) outside {num_users}x{num_items}"
                )));
            }
            entries.push((u, m + i));
            entries.push((m + i, u));
        }
        entries.sort_unstable();
        entries.dedup();
        let pattern = CsrPattern::from_sorted_entries(num_users + num_items, &entries)?;
        let social_positions: Vec<usize> = social
            .edges()
            .iter()
            .map(|&(a, b)| {
                pattern
                    .find(a as usize, b as usize)
                    .expect("social entry present")
            })
            .collect();
        let mut base_weights = vec![1.0; pattern.nnz()];
        for &p in &social_positions {
            base_weights[p] = 0.0;
        }
        Ok(Self {
            pattern: Arc::new(pattern),
            num_users,
            num_items,
            social_positions,
            base_weights,
        })
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_social(&self) -> usize {
        self.social_positions.len()
    }

    /// Full entry weights given one weight per social edge (canonical order).
    pub fn weights(&self, social_weights: &[f64]) -> Result<Vec<f64>> {
        if social_weights.len() != self.social_positions.len() {
            return Err(Error::Construction(format!(
                "{} social weights for {} edges",
                social_weights.len(),
                self.social_positions.len()
            )));
        }
        let mut w = self.base_weights.clone();
        for (&p, &v) in self.social_positions.iter().zip(social_weights) {
            w[p] = v;
        }
        Ok(w)
    }

    pub fn adjacency(&self, social_weights: &[f64]) -> Result<CsrMatrix> {
        if let Some(w) = social_weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Construction(format!(
                "social weight {w} outside [0, 1]"
            )));
        }
        CsrMatrix::new(Arc::clone(&self.pattern), self.weights(social_weights)?)
    }

    /// Places the full entry-weight vector on the tape from a `|S| × 1` social-weight node.
    pub fn weights_on_tape(&self, tape: &mut Tape, social_weights: Var) -> Result<Var> {
        tape.scatter(
            social_weights,
            self.base_weights.clone(),
            self.social_positions.clone(),
        )
    }

    /// Normalize, propagate `layers` times and read out `(P, Q)` on the tape.
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        social_weights: Var,
        users: Var,
        items: Var,
        layers: usize,
    ) -> Result<(Var, Var)> {
        let raw = self.weights_on_tape(tape, social_weights)?;
        let norm = tape.sym_normalize(Arc::clone(&self.pattern), raw)?;
        let e0 = tape.concat_rows(users, items)?;
        let out = propagate_on_tape(tape, &self.pattern, norm, e0, layers)?;
        let p = tape.slice_rows(out, 0, self.num_users)?;
        let q = tape.slice_rows(out, self.num_users, self.num_users + self.num_items)?;
        Ok((p, q))
    }
}

/// Builds the `(M+N)²` adjacency `[S, R; Rᵀ, 0]` with soft social weights.
pub fn build_hetero_adjacency(
    social: &SocialGraph,
    social_weights: &[f64],
    interactions: &[(UserId, ItemId)],
    num_users: usize,
    num_items: usize,
) -> Result<CsrMatrix> {
    HeteroGraph::new(social, interactions, num_users, num_items)?.adjacency(social_weights)
}

/// `E^{l+1} = Â E^l`, returning the mean of `E^0..E^L`. `adj` must already be normalized.
pub fn propagate(
    adj: &CsrMatrix,
    tables: &EmbeddingTables,
    layers: usize,
    keep_layers: bool,
) -> Result<PropagationOutput> {
    let m = tables.users.rows();
    let n = tables.items.rows();
    if adj.dim() != m + n {
        return Err(Error::shape(
            "propagate",
            format!("adjacency {} for {m} users + {n} items", adj.dim()),
        ));
    }
    let d = tables.dim();
    let mut e = DenseMatrix::new(
        m + n,
        d,
        [tables.users.data(), tables.items.data()].concat(),
    )?;
    let mut acc = e.clone();
    let mut kept = keep_layers.then(|| vec![e.clone()]);
    for _ in 0..layers {
        e = crate::numerics::spmm(adj, &e)?;
        acc.add_scaled(&e, 1.0);
        if let Some(k) = kept.as_mut() {
            k.push(e.clone());
        }
    }
    let scale = 1.0 / (layers + 1) as f64;
    let acc = acc.map(|v| v * scale);
    Ok(PropagationOutput {
        users: DenseMatrix::new(m, d, acc.data()[..m * d].to_vec())?,
        items: DenseMatrix::new(n, d, acc.data()[m * d..].to_vec())?,
        layers: kept,
    })
}

/// Tape version of the propagation over all nodes; returns the readout.
pub fn propagate_on_tape(
    tape: &mut Tape,
    pattern: &Arc<CsrPattern>,
    norm_weights: Var,
    e0: Var,
    layers: usize,
) -> Result<Var> {
    let mut terms = vec![e0];
    let mut e = e0;
    for _ in 0..layers {
        e = tape.spmm(Arc::clone(pattern), norm_weights, e)?;
        terms.push(e);
    }
    let c = 1.0 / (layers + 1) as f64;
    tape.combine(terms.into_iter().map(|v| (v, c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::symmetric_normalize;

    #[test]
    fn no_social_edges_gives_symmetric_bipartite() {
        let adj =
            build_hetero_adjacency(&SocialGraph::empty(2), &[], &[(0, 0), (1, 1), (1, 0)], 2, 2)
                .unwrap();
        let d = adj.to_dense();
        assert_eq!(d, d.transpose());
        assert_eq!(adj.pattern().nnz(), 6);
    }

    #[test]
    fn single_interaction_two_by_two() {
        let adj = build_hetero_adjacency(&SocialGraph::empty(1), &[], &[(0, 0)], 1, 1).unwrap();
        assert_eq!(adj.to_dense().data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn block_layout_with_soft_social_weight() {
        let social = SocialGraph::from_edges(2, vec![(0, 1)]).unwrap();
        let adj = build_hetero_adjacency(&social, &[0.7], &[(0, 0)], 2, 1).unwrap();
        let mut nonzeros = Vec::new();
        let dense = adj.to_dense();
        for r in 0..3 {
            for c in 0..3 {
                if dense.get(r, c) != 0.0 {
                    nonzeros.push((r, c, dense.get(r, c)));
                }
            }
        }
        assert_eq!(nonzeros, vec![(0, 1, 0.7), (0, 2, 1.0), (2, 0, 1.0)]);
    }

    #[test]
    fn construction_rejects_out_of_range() {
        assert!(build_hetero_adjacency(&SocialGraph::empty(1), &[], &[(0, 3)], 1, 1).is_err());
        let social = SocialGraph::from_edges(2, vec![(0, 1)]).unwrap();
        assert!(build_hetero_adjacency(&social, &[1.5], &[], 2, 1).is_err());
    }

    fn tables(m: usize, n: usize, d: usize) -> EmbeddingTables {
        EmbeddingTables {
            users: DenseMatrix::from_fn(m, d, |r, c| (r * d + c) as f64 * 0.1 + 0.05),
            items: DenseMatrix::from_fn(n, d, |r, c| -((r * d + c) as f64) * 0.07 + 0.3),
        }
    }

    #[test]
    fn empty_adjacency_scales_by_layer_count() {
        let t = tables(2, 2, 3);
        let adj = CsrMatrix::from_triplets(4, vec![]).unwrap();
        let out = propagate(&adj, &t, 3, false).unwrap();
        assert!(out.users.max_abs_diff(&t.users.map(|v| v / 4.0)) < 1e-15);
        assert!(out.items.max_abs_diff(&t.items.map(|v| v / 4.0)) < 1e-15);
    }

    #[test]
    fn self_loop_graph_is_a_fixed_point() {
        let t = tables(2, 3, 2);
        let adj = symmetric_normalize(&CsrMatrix::identity(5));
        for layers in [0, 1, 4] {
            let out = propagate(&adj, &t, layers, false).unwrap();
            assert!(out.users.max_abs_diff(&t.users) < 1e-15);
            assert!(out.items.max_abs_diff(&t.items) < 1e-15);
        }
    }

    #[test]
    fn zero_layers_returns_layer_zero() {
        let t = tables(2, 2, 2);
        let adj =
            build_hetero_adjacency(&SocialGraph::empty(2), &[], &[(0, 0), (1, 1)], 2, 2).unwrap();
        let out = propagate(&symmetric_normalize(&adj), &t, 0, true).unwrap();
        assert_eq!(out.users, t.users);
        assert_eq!(out.layers.unwrap().len(), 1);
    }
}
