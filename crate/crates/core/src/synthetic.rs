//! Planted-community datasets for desk-scale experiments.
//!
//! Users fall into communities, each split into taste groups that own a
//! disjoint slice of the item catalogue. Interactions mostly stay inside the
//! user's group, social relations stay inside the community (and mostly the
//! group), and a configurable number of fake relations is planted across
//! communities.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::data::{
    split, InteractionStore, Interactions, ItemId, SocialGraph, SplitConfig, UserId,
};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub communities: usize,
    pub users_per_community: usize,
    pub items: usize,
    pub groups_per_community: usize,
    pub interactions_per_user: usize,
    /// Probability an interaction comes from the user's own group.
    pub in_group: f64,
    /// Probability an interaction stays inside the user's community (includes `in_group`).
    pub in_community: f64,
    /// Zipf exponent of item popularity inside a group; 0 is uniform.
    pub popularity_skew: f64,
    pub friends_per_user: usize,
    /// Probability a relation stays inside the user's group.
    pub friend_in_group: f64,
    /// Fake cross-community relations, as a multiple of the clean relation count.
    pub noise_ratio: f64,
    pub split: SplitConfig,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            communities: 2,
            users_per_community: 100,
            items: 200,
            groups_per_community: 4,
            interactions_per_user: 12,
            in_group: 0.7,
            in_community: 0.9,
            popularity_skew: 0.0,
            friends_per_user: 4,
            friend_in_group: 0.8,
            noise_ratio: 1.0,
            split: SplitConfig {
                train_frac: 0.8,
                val_frac: 0.1,
                seed: 0,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedDataset {
    pub store: InteractionStore,
    pub clean_social: SocialGraph,
    /// Clean relations plus the planted cross-community ones.
    pub noisy_social: SocialGraph,
    pub injected: Vec<(UserId, UserId)>,
    pub user_community: Vec<usize>,
    pub user_group: Vec<usize>,
    pub item_group: Vec<usize>,
}

impl PlantedDataset {
    pub fn num_users(&self) -> usize {
        self.user_community.len()
    }
}

fn pick(rng: &mut impl Rng, pool: &[u32]) -> u32 {
    *pool.choose(rng).expect("nonempty pool")
}

/// Draws from `pool` with weight `(rank + 1)^(−skew)` by position.
fn pick_skewed(rng: &mut impl Rng, pool: &[u32], skew: f64) -> u32 {
    if skew == 0.0 {
        return pick(rng, pool);
    }
    let w: Vec<f64> = (0..pool.len())
        .map(|r| ((r + 1) as f64).powf(-skew))
        .collect();
    pool[WeightedIndex::new(&w)
        .expect("positive weights")
        .sample(rng)]
}

pub fn planted(cfg: &PlantedConfig) -> Result<PlantedDataset> {
    let groups = cfg.communities * cfg.groups_per_community;
    if cfg.communities < 2 || cfg.groups_per_community == 0 || cfg.users_per_community < 2 {
        return Err(Error::Config(
            "need at least two communities of two users each".into(),
        ));
    }
    if cfg.items < groups {
        return Err(Error::Config(format!(
            "{} items cannot cover {groups} groups",
            cfg.items
        )));
    }
    if !(0.0..=1.0).contains(&cfg.in_group) || !(cfg.in_group..=1.0).contains(&cfg.in_community) {
        return Err(Error::Config(
            "need 0 <= in_group <= in_community <= 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.friend_in_group)
        || !(cfg.noise_ratio >= 0.0)
        || !(cfg.popularity_skew >= 0.0)
    {
        return Err(Error::Config("invalid social parameters".into()));
    }
    let m = cfg.communities * cfg.users_per_community;
    let user_community: Vec<usize> = (0..m).map(|u| u / cfg.users_per_community).collect();
    let user_group: Vec<usize> = (0..m)
        .map(|u| {
            user_community[u] * cfg.groups_per_community
                + (u % cfg.users_per_community) % cfg.groups_per_community
        })
        .collect();
    let item_group: Vec<usize> = (0..cfg.items).map(|i| i * groups / cfg.items).collect();
    let items_of_group: Vec<Vec<u32>> = (0..groups)
        .map(|g| {
            (0..cfg.items as u32)
                .filter(|&i| item_group[i as usize] == g)
                .collect()
        })
        .collect();
    let community_of_group = |g: usize| g / cfg.groups_per_community;
    let items_of_community = |c: usize, other: bool| -> Vec<u32> {
        (0..cfg.items as u32)
            .filter(|&i| (community_of_group(item_group[i as usize]) == c) != other)
            .collect()
    };
    let users_of = |pred: &dyn Fn(usize) -> bool| -> Vec<u32> {
        (0..m as u32).filter(|&u| pred(u as usize)).collect()
    };

    let mut r = rng::stream(cfg.seed, rng::tag::SYNTH, &[0]);
    let mut pairs = Vec::new();
    for u in 0..m {
        let (c, g) = (user_community[u], user_group[u]);
        let own = &items_of_group[g];
        let community = items_of_community(c, false);
        let outside = items_of_community(c, true);
        let want = cfg.interactions_per_user.min(cfg.items);
        let mut chosen = BTreeSet::new();
        while chosen.len() < want {
            let x: f64 = r.random();
            let pool = if x < cfg.in_group {
                own
            } else if x < cfg.in_community {
                &community
            } else {
                &outside
            };
            chosen.insert(pick_skewed(&mut r, pool, cfg.popularity_skew));
        }
        pairs.extend(chosen.into_iter().map(|i| (u as UserId, i as ItemId)));
    }

    let mut r = rng::stream(cfg.seed, rng::tag::SYNTH, &[1]);
    let mut clean = BTreeSet::new();
    for u in 0..m {
        let (c, g) = (user_community[u], user_group[u]);
        let same_group = users_of(&|v| v != u && user_group[v] == g);
        let same_comm = users_of(&|v| v != u && user_community[v] == c);
        let want = cfg.friends_per_user.min(same_comm.len());
        let mut friends = BTreeSet::new();
        while friends.len() < want {
            let pool = if r.random::<f64>() < cfg.friend_in_group && !same_group.is_empty() {
                &same_group
            } else {
                &same_comm
            };
            friends.insert(pick(&mut r, pool));
        }
        for v in friends {
            clean.insert((u as UserId, v));
            clean.insert((v, u as UserId));
        }
    }
    let clean_social = SocialGraph::from_edges(m, clean.iter().copied().collect())?;

    let mut r = rng::stream(cfg.seed, rng::tag::SYNTH, &[2]);
    let want = (cfg.noise_ratio * clean_social.len() as f64).round() as usize;
    let capacity: usize = (0..cfg.communities)
        .map(|c| {
            let inside = user_community.iter().filter(|&&x| x == c).count();
            inside * (m - inside)
        })
        .sum();
    if want > capacity {
        return Err(Error::Injection(format!(
            "{want} cross-community relations requested, only {capacity} exist"
        )));
    }
    let mut injected = BTreeSet::new();
    while injected.len() < want {
        let a = r.random_range(0..m);
        let b = r.random_range(0..m);
        if user_community[a] != user_community[b] {
            injected.insert((a as UserId, b as UserId));
        }
    }
    let injected: Vec<(UserId, UserId)> = injected.into_iter().collect();
    let noisy_social = SocialGraph::from_edges(
        m,
        clean.into_iter().chain(injected.iter().copied()).collect(),
    )?;

    let store = split(
        &Interactions {
            num_users: m,
            num_items: cfg.items,
            pairs,
        },
        &cfg.split,
    )?;
    Ok(PlantedDataset {
        store,
        clean_social,
        noisy_social,
        injected,
        user_community,
        user_group,
        item_group,
    })
}
