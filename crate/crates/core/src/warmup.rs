//! Cold-item embedding optimization against simulated users, with every
//! user row and warm item row frozen.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneModel, OptimizerKind};
use crate::corpus::{write_json, ColdWarmSplit};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::filter::TwoTowerFilter;
use crate::ids::{ItemId, UserId};
use crate::math::{axpy, dot, log_sigmoid, rng_for, sigmoid};
use crate::optim::Adam;
use crate::refiner::Simulation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Mean of the simulated users' embeddings.
    UserMean,
    /// The behavior filter's item mapping of the raw content vector.
    FilterMap,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmupConfig {
    pub lr: f64,
    pub steps: usize,
    pub negatives: usize,
    pub init: InitMode,
    pub optimizer: OptimizerKind,
    /// Skip cold items without a simulation instead of failing.
    pub skip_missing: bool,
    /// Append simulated pairs to warm-train and retrain the backbone
    /// instead of optimizing cold rows in isolation.
    pub retrain_with_simulated: bool,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            steps: 100,
            negatives: 1,
            init: InitMode::UserMean,
            optimizer: OptimizerKind::Adam,
            skip_missing: true,
            retrain_with_simulated: false,
        }
    }
}

pub fn init_cold_embedding(
    mode: InitMode,
    sim_users: &[UserId],
    backbone: &BackboneModel,
    filter_b: Option<&TwoTowerFilter>,
    raw: Option<&[f64]>,
) -> Result<Vec<f64>> {
    match mode {
        InitMode::Zero => Ok(vec![0.0; backbone.dim()]),
        InitMode::UserMean => {
            if sim_users.is_empty() {
                return Err(Error::InvalidArgument(
                    "user-mean init needs at least one simulated user".into(),
                ));
            }
            let mut m = vec![0.0; backbone.dim()];
            for &u in sim_users {
                axpy(1.0, backbone.user(u), &mut m);
            }
            let n = sim_users.len() as f64;
            m.iter_mut().for_each(|v| *v /= n);
            Ok(m)
        }
        InitMode::FilterMap => {
            let f = filter_b.ok_or(Error::VariantMismatch {
                variant: "filter-map init".into(),
                component: "the behavior filter",
            })?;
            let raw = raw.ok_or(Error::VariantMismatch {
                variant: "filter-map init".into(),
                component: "a content vector",
            })?;
            let v = f.map_item(raw)?;
            if v.len() != backbone.dim() {
                return Err(Error::DimMismatch {
                    expected: backbone.dim(),
                    actual: v.len(),
                });
            }
            Ok(v)
        }
    }
}

/// `-mean_j ln σ(e_{u+}·e_i − e_{u−j}·e_i)` and its gradient in `e_i`.
pub fn item_bpr_gradient(
    e_i: &[f64],
    backbone: &BackboneModel,
    pos: UserId,
    negs: &[UserId],
) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; e_i.len()];
    if negs.is_empty() {
        return (0.0, g);
    }
    let n = negs.len() as f64;
    let up = backbone.user(pos);
    let sp = dot(up, e_i);
    let mut loss = 0.0;
    for &neg in negs {
        let un = backbone.user(neg);
        let x = sp - dot(un, e_i);
        loss -= log_sigmoid(x);
        let c = -sigmoid(-x) / n;
        axpy(c, up, &mut g);
        axpy(-c, un, &mut g);
    }
    (loss / n, g)
}

pub fn item_bpr_loss(e_i: &[f64], backbone: &BackboneModel, pos: UserId, negs: &[UserId]) -> f64 {
    item_bpr_gradient(e_i, backbone, pos, negs).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdEmbeddingResult {
    pub item: ItemId,
    pub embedding: Vec<f64>,
    pub simulated: usize,
    /// Loss of the last step, before its update; `None` without steps.
    pub final_loss: Option<f64>,
}

/// Item-side BPR on one cold embedding; only `init` is updated.
pub fn optimize_cold_embedding(
    item: ItemId,
    sim_users: &[UserId],
    init: Vec<f64>,
    backbone: &BackboneModel,
    cfg: &WarmupConfig,
    seed: u64,
) -> Result<ColdEmbeddingResult> {
    if sim_users.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "item {item} has no simulated users"
        )));
    }
    let mut e = init;
    if cfg.steps == 0 || cfg.lr == 0.0 {
        return Ok(ColdEmbeddingResult {
            item,
            embedding: e,
            simulated: sim_users.len(),
            final_loss: None,
        });
    }
    let mut inside = vec![false; backbone.n_users()];
    for &u in sim_users {
        inside[u.index()] = true;
    }
    let outside: Vec<UserId> = (0..backbone.n_users())
        .map(UserId::from)
        .filter(|u| !inside[u.index()])
        .collect();
    if outside.is_empty() {
        return Err(Error::NoNegativeUsers);
    }
    let mut rng = rng_for(seed, 0x3000 + u64::from(item.0));
    let mut adam = Adam::new(e.len());
    let mut negs = Vec::with_capacity(cfg.negatives.max(1));
    let mut last = None;
    for _ in 0..cfg.steps {
        let pos = sim_users[rng.random_range(0..sim_users.len())];
        negs.clear();
        for _ in 0..cfg.negatives.max(1) {
            negs.push(outside[rng.random_range(0..outside.len())]);
        }
        let (loss, g) = item_bpr_gradient(&e, backbone, pos, &negs);
        if !loss.is_finite() {
            return Err(Error::Divergence(loss));
        }
        match cfg.optimizer {
            OptimizerKind::Sgd => axpy(-cfg.lr, &g, &mut e),
            OptimizerKind::Adam => adam.step(&mut e, &g, cfg.lr),
        }
        last = Some(loss);
    }
    Ok(ColdEmbeddingResult {
        item,
        embedding: e,
        simulated: sim_users.len(),
        final_loss: last,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupItemReport {
    pub item: ItemId,
    pub simulated: usize,
    pub final_loss: Option<f64>,
    pub fallback: bool,
    pub init: InitMode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WarmupReport {
    pub items: Vec<WarmupItemReport>,
    /// Cold items left untouched (no simulation or no simulated users).
    pub skipped: Vec<ItemId>,
}

impl WarmupReport {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }
}

/// Replaces every simulated cold row of a copy of `backbone` by its
/// optimized embedding. User rows and warm item rows are copied bit for bit.
/// A fallback singleton starts from the filter mapping when the default
/// user-mean init is configured and a behavior filter is available.
pub fn warm_all_cold(
    backbone: &BackboneModel,
    split: &ColdWarmSplit,
    sims: &[Simulation],
    filter_b: Option<&TwoTowerFilter>,
    content: Option<&EmbeddingTable>,
    cfg: &WarmupConfig,
    seed: u64,
) -> Result<(BackboneModel, WarmupReport)> {
    let by_item: BTreeMap<ItemId, &Simulation> = sims.iter().map(|s| (s.item, s)).collect();
    for &item in by_item.keys() {
        if !split.is_cold(item) {
            return Err(Error::InvalidArgument(format!(
                "simulation given for warm item {item}"
            )));
        }
    }
    let mut report = WarmupReport::default();
    let mut jobs = Vec::new();
    for &item in &split.cold_items {
        match by_item.get(&item) {
            Some(s) if !s.kept.is_empty() => jobs.push(*s),
            Some(_) => report.skipped.push(item),
            None if cfg.skip_missing => {
                log::warn!("no simulation for cold item {item}; left as is");
                report.skipped.push(item);
            }
            None => return Err(Error::MissingSimulation(item.0)),
        }
    }

    let results: Vec<Result<(ColdEmbeddingResult, WarmupItemReport)>> = jobs
        .par_iter()
        .map(|s| {
            let mode = if s.fallback
                && cfg.init == InitMode::UserMean
                && filter_b.is_some()
                && content.is_some()
            {
                InitMode::FilterMap
            } else {
                cfg.init
            };
            let raw = content.map(|c| c.row(s.item.index()));
            let init = init_cold_embedding(mode, &s.kept, backbone, filter_b, raw)?;
            let r = optimize_cold_embedding(s.item, &s.kept, init, backbone, cfg, seed)?;
            let rep = WarmupItemReport {
                item: s.item,
                simulated: s.kept.len(),
                final_loss: r.final_loss,
                fallback: s.fallback,
                init: mode,
            };
            Ok((r, rep))
        })
        .collect();

    let mut model = backbone.clone();
    for r in results {
        let (res, rep) = r?;
        if !res.embedding.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence(f64::NAN));
        }
        model.set_item_row(res.item, &res.embedding)?;
        report.items.push(rep);
    }
    Ok((model, report))
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    fn model(seed: u64) -> BackboneModel {
        BackboneModel::init(6, 4, 3, seed)
    }

    #[test]
    fn init_modes() {
        let m = model(1);
        assert_eq!(
            init_cold_embedding(InitMode::Zero, &[], &m, None, None).unwrap(),
            vec![0.0; 3]
        );
        assert_eq!(
            init_cold_embedding(InitMode::UserMean, &[UserId(2)], &m, None, None).unwrap(),
            m.user(UserId(2))
        );
        let got = init_cold_embedding(
            InitMode::UserMean,
            &[UserId(0), UserId(3), UserId(5)],
            &m,
            None,
            None,
        )
        .unwrap();
        for k in 0..3 {
            let want = (m.user(UserId(0))[k] + m.user(UserId(3))[k] + m.user(UserId(5))[k]) / 3.0;
            assert!((got[k] - want).abs() < 1e-15);
        }
        assert!(init_cold_embedding(InitMode::UserMean, &[], &m, None, None).is_err());
        assert!(init_cold_embedding(InitMode::FilterMap, &[], &m, None, None).is_err());
    }

    #[test]
    fn zero_steps_returns_init() {
        let m = model(2);
        let cfg = WarmupConfig {
            steps: 0,
            ..Default::default()
        };
        let r = optimize_cold_embedding(ItemId(1), &[UserId(0)], vec![0.5, -0.5, 1.0], &m, &cfg, 0)
            .unwrap();
        assert_eq!(r.embedding, vec![0.5, -0.5, 1.0]);
        assert_eq!(r.final_loss, None);
    }

    #[test]
    fn all_users_simulated_is_an_error() {
        let m = model(3);
        let all: Vec<UserId> = (0..6).map(UserId).collect();
        assert!(matches!(
            optimize_cold_embedding(
                ItemId(0),
                &all,
                vec![0.0; 3],
                &m,
                &WarmupConfig::default(),
                0
            ),
            Err(Error::NoNegativeUsers)
        ));
    }

    #[test]
    fn deterministic() {
        let m = model(4);
        let run = || {
            optimize_cold_embedding(
                ItemId(2),
                &[UserId(1), UserId(4)],
                vec![0.0; 3],
                &m,
                &WarmupConfig::default(),
                9,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}
