use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;

use super::{SocialGraph, UserId};
use crate::error::{Error, Result};
use crate::rng;

/// A social graph with fake relations added, plus the list of what was added.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoisyGraph {
    pub graph: SocialGraph,
    /// Injected edges in canonical order.
    pub injected: Vec<(UserId, UserId)>,
}

/// Adds `round(ratio · |edges|)` directed relations drawn uniformly from the
/// pairs that are neither self-loops nor already present.
pub fn inject_noise(graph: &SocialGraph, ratio: f64, seed: u64) -> Result<NoisyGraph> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::Injection(format!(
            "noise ratio {ratio} must be finite and >= 0"
        )));
    }
    let m = graph.num_users() as u64;
    let count = (ratio * graph.len() as f64).round() as u64;
    let capacity = m * m.saturating_sub(1) - graph.len() as u64;
    if count > capacity {
        return Err(Error::Injection(format!(
            "{count} fake relations requested but only {capacity} free pairs among {m} users"
        )));
    }
    let mut rng = rng::stream(seed, rng::tag::NOISE_INJECT, &[]);
    let mut injected: Vec<(UserId, UserId)> = if count * 2 <= capacity {
        let mut chosen = HashSet::with_capacity(count as usize);
        while (chosen.len() as u64) < count {
            let a = rng.random_range(0..m) as UserId;
            let b = rng.random_range(0..m) as UserId;
            if a != b && !graph.contains(a, b) {
                chosen.insert((a, b));
            }
        }
        chosen.into_iter().collect()
    } else {
        let free: Vec<(UserId, UserId)> = (0..m as UserId)
            .flat_map(|a| (0..m as UserId).map(move |b| (a, b)))
            .filter(|&(a, b)| a != b && !graph.contains(a, b))
            .collect();
        index::sample(&mut rng, free.len(), count as usize)
            .into_iter()
            .map(|k| free[k])
            .collect()
    };
    injected.sort_unstable();
    let mut edges = graph.edges().to_vec();
    edges.extend_from_slice(&injected);
    Ok(NoisyGraph {
        graph: SocialGraph::from_edges(graph.num_users(), edges)?,
        injected,
    })
}
