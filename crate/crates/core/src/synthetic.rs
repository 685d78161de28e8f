//! Planted-structure synthetic datasets with known ground truth.
//!
//! Users and items are assigned to topics, and topics are grouped into
//! clusters. A user interacts with an item of its own topic with
//! probability `p_topic`, and with an item of another topic in its cluster
//! with probability `p_cluster`. There are no interactions across clusters.
//! Item text is drawn mostly from a topic-specific vocabulary, so content
//! predicts the audience. The set of generated pairs is the ground truth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, IdMap, InteractionLog, ItemCatalog, ItemContent};
use crate::error::{Error, Result};
use crate::ids::{ItemId, Pair, UserId};
use crate::math::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub topics_per_cluster: usize,
    pub p_topic: f64,
    pub p_cluster: f64,
    pub vocab_per_topic: usize,
    pub shared_vocab: usize,
    /// Topic words per item text.
    pub topic_words: usize,
    /// Shared (uninformative) words per item text.
    pub noise_words: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            users: 200,
            items: 120,
            clusters: 2,
            topics_per_cluster: 5,
            p_topic: 0.7,
            p_cluster: 0.03,
            vocab_per_topic: 12,
            shared_vocab: 30,
            topic_words: 6,
            noise_words: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedData {
    pub dataset: Dataset,
    /// Every generated interaction.
    pub truth: Vec<Pair>,
    pub user_topic: Vec<usize>,
    pub item_topic: Vec<usize>,
    pub topics_per_cluster: usize,
}

impl PlantedData {
    pub fn user_cluster(&self, u: UserId) -> usize {
        self.user_topic[u.index()] / self.topics_per_cluster
    }

    pub fn item_cluster(&self, i: ItemId) -> usize {
        self.item_topic[i.index()] / self.topics_per_cluster
    }
}

pub fn generate_planted(cfg: &PlantedConfig, seed: u64) -> Result<PlantedData> {
    let n_topics = cfg.clusters * cfg.topics_per_cluster;
    if n_topics == 0
        || cfg.users < n_topics
        || cfg.items < n_topics
        || cfg.vocab_per_topic == 0
        || cfg.topic_words == 0
    {
        return Err(Error::InvalidArgument(
            "planted config needs at least one user, item and word per topic".into(),
        ));
    }
    let mut rng = rng_for(seed, 0x91a7);
    let user_topic: Vec<usize> = (0..cfg.users).map(|u| u % n_topics).collect();
    let item_topic: Vec<usize> = (0..cfg.items).map(|i| i % n_topics).collect();
    let cluster = |t: usize| t / cfg.topics_per_cluster;

    let mut pairs = Vec::new();
    let mut user_deg = vec![0usize; cfg.users];
    for (i, &ti) in item_topic.iter().enumerate() {
        let mut any = false;
        for (u, &tu) in user_topic.iter().enumerate() {
            let p = if tu == ti {
                cfg.p_topic
            } else if cluster(tu) == cluster(ti) {
                cfg.p_cluster
            } else {
                0.0
            };
            if p > 0.0 && rng.random_bool(p) {
                pairs.push((UserId::from(u), ItemId::from(i)));
                user_deg[u] += 1;
                any = true;
            }
        }
        if !any {
            // every item needs an audience; take a same-topic user
            let u = ti + n_topics * rng.random_range(0..=(cfg.users - 1 - ti) / n_topics);
            pairs.push((UserId::from(u), ItemId::from(i)));
            user_deg[u] += 1;
        }
    }
    for (u, &tu) in user_topic.iter().enumerate() {
        if user_deg[u] == 0 {
            let i = tu + n_topics * rng.random_range(0..=(cfg.items - 1 - tu) / n_topics);
            pairs.push((UserId::from(u), ItemId::from(i)));
        }
    }

    let catalog = ItemCatalog::new(
        item_topic
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let mut words: Vec<String> = (0..cfg.topic_words)
                    .map(|_| format!("topic{t}word{}", rng.random_range(0..cfg.vocab_per_topic)))
                    .collect();
                if cfg.shared_vocab > 0 {
                    words.extend(
                        (0..cfg.noise_words)
                            .map(|_| format!("common{}", rng.random_range(0..cfg.shared_vocab))),
                    );
                }
                let text = words.join(" ");
                ItemContent {
                    title: format!("Item {i}: {}", words[..words.len().min(3)].join(" ")),
                    content: text,
                    features: vec![format!("topic{t}")],
                }
            })
            .collect(),
    )?;
    let log = InteractionLog::new(cfg.users, cfg.items, pairs)?;
    let ids = IdMap {
        users: (0..cfg.users).map(|u| format!("u{u}")).collect(),
        items: (0..cfg.items).map(|i| format!("i{i}")).collect(),
    };
    let truth = log.pairs().to_vec();
    Ok(PlantedData {
        dataset: Dataset::new(log, catalog, ids)?,
        truth,
        user_topic,
        item_topic,
        topics_per_cluster: cfg.topics_per_cluster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interactions_stay_within_clusters() {
        let d = generate_planted(&PlantedConfig::default(), 3).unwrap();
        assert_eq!(d.dataset.log.n_users(), 200);
        assert_eq!(d.dataset.log.n_items(), 120);
        for &(u, i) in &d.truth {
            assert_eq!(d.user_cluster(u), d.item_cluster(i));
        }
        for i in 0..120 {
            assert!(!d.dataset.log.item_users(ItemId(i)).is_empty());
        }
        for u in 0..200 {
            assert!(!d.dataset.log.user_items(UserId(u)).is_empty());
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_planted(&PlantedConfig::default(), 1).unwrap();
        let b = generate_planted(&PlantedConfig::default(), 1).unwrap();
        let c = generate_planted(&PlantedConfig::default(), 2).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_ne!(a.truth, c.truth);
    }
}
