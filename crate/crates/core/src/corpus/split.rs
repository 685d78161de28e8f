use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ItemId, Pair};
use crate::math::rng_for;

use super::{read_json, write_json, InteractionLog};

/// Cold/warm experimental split.
///
/// Cold items keep no training interactions: each cold item's records are
/// divided between `cold_val` and `cold_test`. Warm records are divided
/// 8:1:1 into train/val/test over the whole warm pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdWarmSplit {
    pub seed: u64,
    pub cold_frac: f64,
    pub n_users: usize,
    pub n_items: usize,
    pub warm_items: Vec<ItemId>,
    pub cold_items: Vec<ItemId>,
    pub warm_train: Vec<Pair>,
    pub warm_val: Vec<Pair>,
    pub warm_test: Vec<Pair>,
    pub cold_val: Vec<Pair>,
    pub cold_test: Vec<Pair>,
}

/// Number of cold items for a fraction of `n` items. The small epsilon
/// absorbs representation error such as `120 * (20/120) = 19.999…`.
pub(crate) fn cold_count(n: usize, cold_frac: f64) -> usize {
    ((n as f64) * cold_frac + 1e-9).floor() as usize
}

pub fn make_cold_split(log: &InteractionLog, cold_frac: f64, seed: u64) -> Result<ColdWarmSplit> {
    if !(0.0..1.0).contains(&cold_frac) {
        return Err(Error::InvalidArgument(format!(
            "cold_frac must lie in [0, 1), got {cold_frac}"
        )));
    }
    let n_items = log.n_items();
    let mut rng = rng_for(seed, 0);

    let mut order: Vec<ItemId> = (0..n_items).map(ItemId::from).collect();
    order.shuffle(&mut rng);
    let n_cold = cold_count(n_items, cold_frac);
    let mut cold_items = order[..n_cold].to_vec();
    let mut warm_items = order[n_cold..].to_vec();
    cold_items.sort_unstable();
    warm_items.sort_unstable();

    let mut cold_val = Vec::new();
    let mut cold_test = Vec::new();
    for &item in &cold_items {
        let mut users = log.item_users(item).to_vec();
        users.shuffle(&mut rng);
        // odd counts leave the extra record in test
        let n_val = users.len() / 2;
        cold_val.extend(users[..n_val].iter().map(|&u| (u, item)));
        cold_test.extend(users[n_val..].iter().map(|&u| (u, item)));
    }

    let mut is_cold = vec![false; n_items];
    for &c in &cold_items {
        is_cold[c.index()] = true;
    }
    let mut warm: Vec<Pair> = log
        .pairs()
        .iter()
        .copied()
        .filter(|(_, i)| !is_cold[i.index()])
        .collect();
    warm.shuffle(&mut rng);
    let n_train = ((warm.len() as f64) * 0.8).round() as usize;
    let n_val = (((warm.len() as f64) * 0.1).round() as usize).min(warm.len() - n_train);
    let warm_test = warm.split_off(n_train + n_val);
    let warm_val = warm.split_off(n_train);

    Ok(ColdWarmSplit {
        seed,
        cold_frac,
        n_users: log.n_users(),
        n_items,
        warm_items,
        cold_items,
        warm_train: warm,
        warm_val,
        warm_test,
        cold_val,
        cold_test,
    })
}

impl ColdWarmSplit {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }

    pub fn cold_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_items];
        for c in &self.cold_items {
            m[c.index()] = true;
        }
        m
    }

    pub fn is_cold(&self, item: ItemId) -> bool {
        self.cold_items.binary_search(&item).is_ok()
    }

    /// Per-user item lists for a set of pairs, sorted by item id.
    pub fn by_user(&self, pairs: &[Pair]) -> Vec<Vec<ItemId>> {
        group_by_user(self.n_users, pairs)
    }

    /// Per-user warm-train histories, in the order the pairs appear.
    pub fn train_histories(&self) -> Vec<Vec<ItemId>> {
        let mut h = vec![Vec::new(); self.n_users];
        for &(u, i) in &self.warm_train {
            h[u.index()].push(i);
        }
        h
    }

    /// Consistency checks for the partition properties. Returns the first
    /// violation found.
    pub fn check_invariants(&self, log: &InteractionLog) -> std::result::Result<(), String> {
        let cold = self.cold_mask();
        if self.warm_items.iter().any(|i| cold[i.index()]) {
            return Err("warm and cold item sets overlap".into());
        }
        if self.warm_items.len() + self.cold_items.len() != self.n_items {
            return Err("warm ∪ cold does not cover the item universe".into());
        }
        for (name, set) in [
            ("warm_train", &self.warm_train),
            ("warm_val", &self.warm_val),
            ("warm_test", &self.warm_test),
        ] {
            if set.iter().any(|(_, i)| cold[i.index()]) {
                return Err(format!("{name} contains a cold item"));
            }
        }
        for (name, set) in [("cold_val", &self.cold_val), ("cold_test", &self.cold_test)] {
            if set.iter().any(|(_, i)| !cold[i.index()]) {
                return Err(format!("{name} contains a warm item"));
            }
        }
        let mut all: Vec<Pair> = [
            &self.warm_train,
            &self.warm_val,
            &self.warm_test,
            &self.cold_val,
            &self.cold_test,
        ]
        .into_iter()
        .flatten()
        .copied()
        .collect();
        let total = all.len();
        all.sort_unstable();
        all.dedup();
        if all.len() != total {
            return Err("a pair appears in more than one split".into());
        }
        let mut expected = log.pairs().to_vec();
        expected.sort_unstable();
        if all != expected {
            return Err("splits do not partition the interaction log".into());
        }
        Ok(())
    }
}

pub(crate) fn group_by_user(n_users: usize, pairs: &[Pair]) -> Vec<Vec<ItemId>> {
    let mut out = vec![Vec::new(); n_users];
    for &(u, i) in pairs {
        out[u.index()].push(i);
    }
    for v in &mut out {
        v.sort_unstable();
    }
    out
}
