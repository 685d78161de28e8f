//! Matrix-factorization backbone trained with BPR on warm-train pairs.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ColdWarmSplit;
use crate::embedding::{load_tables, save_tables, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{mean_metrics, user_order, Scorer};
use crate::ids::{ItemId, Pair, UserId};
use crate::math::{axpy, derive_seed, dot, log_sigmoid, rng_for, sigmoid};

/// Rejection-sampling budget for one negative.
pub const MAX_REJECTIONS: usize = 100;

/// `rows x dim` table of `N(0, 0.01²)` entries, reproducible per seed.
pub fn init_embeddings(rows: usize, dim: usize, seed: u64) -> EmbeddingTable {
    EmbeddingTable::random_normal(rows, dim, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneModel {
    pub users: EmbeddingTable,
    pub items: EmbeddingTable,
    pub trained_epochs: usize,
}

impl BackboneModel {
    pub fn new(users: EmbeddingTable, items: EmbeddingTable) -> Result<Self> {
        if users.dim() != items.dim() {
            return Err(Error::DimMismatch {
                expected: users.dim(),
                actual: items.dim(),
            });
        }
        Ok(Self {
            users,
            items,
            trained_epochs: 0,
        })
    }

    pub fn init(n_users: usize, n_items: usize, dim: usize, seed: u64) -> Self {
        Self {
            users: init_embeddings(n_users, dim, derive_seed(seed, 1)),
            items: init_embeddings(n_items, dim, derive_seed(seed, 2)),
            trained_epochs: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.users.dim()
    }

    pub fn n_users(&self) -> usize {
        self.users.rows()
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    pub fn user(&self, u: UserId) -> &[f64] {
        self.users.row(u.index())
    }

    pub fn item(&self, i: ItemId) -> &[f64] {
        self.items.row(i.index())
    }

    /// `e_u · e_i`, bounds-checked.
    pub fn score(&self, u: UserId, i: ItemId) -> Result<f64> {
        self.check_user(u)?;
        self.check_item(i)?;
        Ok(dot(self.user(u), self.item(i)))
    }

    fn check_user(&self, u: UserId) -> Result<()> {
        if u.index() >= self.n_users() {
            return Err(Error::OutOfBounds {
                kind: "user",
                id: u.index(),
                len: self.n_users(),
            });
        }
        Ok(())
    }

    fn check_item(&self, i: ItemId) -> Result<()> {
        if i.index() >= self.n_items() {
            return Err(Error::OutOfBounds {
                kind: "item",
                id: i.index(),
                len: self.n_items(),
            });
        }
        Ok(())
    }

    pub fn set_item_row(&mut self, i: ItemId, v: &[f64]) -> Result<()> {
        self.check_item(i)?;
        self.items.set_row(i.index(), v)
    }

    /// Writes the user table followed by the item table.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_tables(path, &[&self.users, &self.items])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut t = load_tables(path)?;
        if t.len() != 2 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("expected user and item tables, found {}", t.len()),
            });
        }
        let items = t.pop().unwrap();
        let users = t.pop().unwrap();
        Self::new(users, items)
    }
}

impl Scorer for BackboneModel {
    fn score(&self, user: UserId, item: ItemId) -> f64 {
        dot(self.user(user), self.item(item))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BprTriple {
    pub user: UserId,
    pub pos: ItemId,
    pub neg: ItemId,
}

/// Uniform negative items for a user, excluding the user's observed items.
pub struct NegativeSampler {
    observed: Vec<HashSet<ItemId>>,
    universe: Vec<ItemId>,
}

impl NegativeSampler {
    pub fn new(n_users: usize, observed: &[Pair], universe: &[ItemId]) -> Self {
        let mut sets = vec![HashSet::new(); n_users];
        for &(u, i) in observed {
            sets[u.index()].insert(i);
        }
        Self {
            observed: sets,
            universe: universe.to_vec(),
        }
    }

    pub fn is_observed(&self, u: UserId, i: ItemId) -> bool {
        self.observed[u.index()].contains(&i)
    }

    /// `None` when `MAX_REJECTIONS` draws all hit observed items.
    pub fn sample<R: Rng>(&self, u: UserId, rng: &mut R) -> Option<ItemId> {
        if self.universe.is_empty() {
            return None;
        }
        for _ in 0..MAX_REJECTIONS {
            let j = self.universe[rng.random_range(0..self.universe.len())];
            if !self.observed[u.index()].contains(&j) {
                return Some(j);
            }
        }
        None
    }
}

/// Draws `n` triples with positives uniform over `train` and negatives
/// uniform over the unobserved part of `warm_items`. Draws whose user has no
/// reachable negative are skipped with a warning, so fewer than `n` triples
/// may come back.
pub fn sample_bpr_triples(
    train: &[Pair],
    n_users: usize,
    warm_items: &[ItemId],
    n: usize,
    seed: u64,
) -> Result<Vec<BprTriple>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if train.is_empty() {
        return Err(Error::NoPositives);
    }
    let sampler = NegativeSampler::new(n_users, train, warm_items);
    let mut rng = rng_for(seed, 0);
    let mut out = Vec::with_capacity(n);
    let mut skipped = 0usize;
    for _ in 0..n {
        let (u, i) = train[rng.random_range(0..train.len())];
        match sampler.sample(u, &mut rng) {
            Some(j) => out.push(BprTriple {
                user: u,
                pos: i,
                neg: j,
            }),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!(
            "skipped {skipped} draws whose user has interacted with (nearly) every warm item"
        );
    }
    Ok(out)
}

/// Row-sparse gradients of the backbone tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrads {
    pub users: BTreeMap<usize, Vec<f64>>,
    pub items: BTreeMap<usize, Vec<f64>>,
}

fn acc(map: &mut BTreeMap<usize, Vec<f64>>, row: usize, dim: usize) -> &mut Vec<f64> {
    map.entry(row).or_insert_with(|| vec![0.0; dim])
}

/// Mean BPR loss `-mean ln σ(e_u·e_i − e_u·e_j)`.
pub fn bpr_loss(model: &BackboneModel, triples: &[BprTriple]) -> f64 {
    if triples.is_empty() {
        return 0.0;
    }
    let total: f64 = triples
        .iter()
        .map(|t| {
            let eu = model.user(t.user);
            -log_sigmoid(dot(eu, model.item(t.pos)) - dot(eu, model.item(t.neg)))
        })
        .sum();
    total / triples.len() as f64
}

/// Loss plus `l2/2 · mean(|e_u|² + |e_i|² + |e_j|²)`: the objective whose
/// gradient [`bpr_gradients`] returns.
pub fn bpr_objective(model: &BackboneModel, triples: &[BprTriple], l2: f64) -> f64 {
    if triples.is_empty() {
        return 0.0;
    }
    let reg: f64 = triples
        .iter()
        .map(|t| {
            let (u, i, j) = (model.user(t.user), model.item(t.pos), model.item(t.neg));
            dot(u, u) + dot(i, i) + dot(j, j)
        })
        .sum();
    bpr_loss(model, triples) + 0.5 * l2 * reg / triples.len() as f64
}

/// Pre-step loss and gradients of [`bpr_objective`].
pub fn bpr_gradients(
    model: &BackboneModel,
    triples: &[BprTriple],
    l2: f64,
) -> Result<(f64, SparseGrads)> {
    let mut grads = SparseGrads::default();
    if triples.is_empty() {
        return Ok((0.0, grads));
    }
    let dim = model.dim();
    let n = triples.len() as f64;
    let mut loss = 0.0;
    let mut diff = vec![0.0; dim];
    for t in triples {
        model.check_user(t.user)?;
        model.check_item(t.pos)?;
        model.check_item(t.neg)?;
        let (eu, ei, ej) = (model.user(t.user), model.item(t.pos), model.item(t.neg));
        for k in 0..dim {
            diff[k] = ei[k] - ej[k];
        }
        let x = dot(eu, &diff);
        loss -= log_sigmoid(x);
        // d(-ln σ(x))/dx = -σ(-x)
        let g = -sigmoid(-x) / n;
        let gu = acc(&mut grads.users, t.user.index(), dim);
        axpy(g, &diff, gu);
        if l2 != 0.0 {
            axpy(l2 / n, eu, gu);
        }
        let gi = acc(&mut grads.items, t.pos.index(), dim);
        axpy(g, eu, gi);
        if l2 != 0.0 {
            axpy(l2 / n, ei, gi);
        }
        let gj = acc(&mut grads.items, t.neg.index(), dim);
        axpy(-g, eu, gj);
        if l2 != 0.0 {
            axpy(l2 / n, ej, gj);
        }
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::Divergence(loss));
    }
    Ok((loss, grads))
}

/// One plain SGD step on the rows named in `triples`. Returns the
/// pre-step loss; on a non-finite loss the model is left untouched.
pub fn bpr_step(model: &mut BackboneModel, triples: &[BprTriple], lr: f64) -> Result<f64> {
    bpr_step_with(model, triples, lr, 0.0, &mut Optimizer::Sgd)
}

pub fn bpr_step_with(
    model: &mut BackboneModel,
    triples: &[BprTriple],
    lr: f64,
    l2: f64,
    opt: &mut Optimizer,
) -> Result<f64> {
    let (loss, grads) = bpr_gradients(model, triples, l2)?;
    opt.apply(model, &grads, lr);
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Row-sparse Adam: moments and updates touch only rows with a gradient.
#[derive(Debug, Clone)]
pub struct SparseAdam {
    m_users: EmbeddingTable,
    v_users: EmbeddingTable,
    m_items: EmbeddingTable,
    v_items: EmbeddingTable,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl SparseAdam {
    pub fn new(model: &BackboneModel) -> Self {
        let d = model.dim();
        Self {
            m_users: EmbeddingTable::zeros(model.n_users(), d),
            v_users: EmbeddingTable::zeros(model.n_users(), d),
            m_items: EmbeddingTable::zeros(model.n_items(), d),
            v_items: EmbeddingTable::zeros(model.n_items(), d),
            step: 0,
        }
    }
}

fn adam_rows(
    params: &mut EmbeddingTable,
    m: &mut EmbeddingTable,
    v: &mut EmbeddingTable,
    grads: &BTreeMap<usize, Vec<f64>>,
    lr: f64,
    step: i32,
) {
    let c1 = 1.0 - BETA1.powi(step);
    let c2 = 1.0 - BETA2.powi(step);
    for (&r, g) in grads {
        let (p, mr, vr) = (params.row_mut(r), m.row_mut(r), v.row_mut(r));
        for k in 0..g.len() {
            mr[k] = BETA1 * mr[k] + (1.0 - BETA1) * g[k];
            vr[k] = BETA2 * vr[k] + (1.0 - BETA2) * g[k] * g[k];
            p[k] -= lr * (mr[k] / c1) / ((vr[k] / c2).sqrt() + ADAM_EPS);
        }
    }
}

pub enum Optimizer {
    Sgd,
    Adam(Box<SparseAdam>),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, model: &BackboneModel) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(Box::new(SparseAdam::new(model))),
        }
    }

    pub fn apply(&mut self, model: &mut BackboneModel, grads: &SparseGrads, lr: f64) {
        if lr == 0.0 {
            return;
        }
        match self {
            Optimizer::Sgd => {
                for (&r, g) in &grads.users {
                    axpy(-lr, g, model.users.row_mut(r));
                }
                for (&r, g) in &grads.items {
                    axpy(-lr, g, model.items.row_mut(r));
                }
            }
            Optimizer::Adam(a) => {
                a.step += 1;
                adam_rows(
                    &mut model.users,
                    &mut a.m_users,
                    &mut a.v_users,
                    &grads.users,
                    lr,
                    a.step,
                );
                adam_rows(
                    &mut model.items,
                    &mut a.m_items,
                    &mut a.v_items,
                    &grads.items,
                    lr,
                    a.step,
                );
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub dim: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub l2: f64,
    /// Users sampled from warm-val for the early-stopping metric.
    pub eval_users: usize,
    pub eval_k: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            dim: 200,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            batch_size: 1024,
            max_epochs: 500,
            patience: 10,
            l2: 0.0,
            eval_users: 2000,
            eval_k: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub val_ndcg: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: BackboneModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_ndcg: Option<f64>,
}

/// Halvings of the learning rate tried on a diverging batch before giving up.
const MAX_LR_HALVINGS: usize = 20;

pub fn train_backbone(
    split: &ColdWarmSplit,
    cfg: &BackboneConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if split.warm_train.is_empty() {
        return Err(Error::NoPositives);
    }
    if cfg.batch_size == 0 || cfg.dim == 0 {
        return Err(Error::InvalidArgument(
            "backbone dim and batch_size must be positive".into(),
        ));
    }
    let mut model = BackboneModel::init(split.n_users, split.n_items, cfg.dim, seed);
    let mut history = Vec::new();
    if cfg.max_epochs == 0 {
        return Ok(TrainOutcome {
            model,
            history,
            best_epoch: 0,
            best_val_ndcg: None,
        });
    }

    let sampler = NegativeSampler::new(split.n_users, &split.warm_train, &split.warm_items);
    let train_by_user = split.by_user(&split.warm_train);
    let val_by_user = split.by_user(&split.warm_val);
    let val_users: Vec<UserId> = user_order(split.n_users, seed)
        .into_iter()
        .filter(|u| !val_by_user[u.index()].is_empty())
        .take(cfg.eval_users)
        .collect();

    let mut opt = Optimizer::new(cfg.optimizer, &model);
    let mut lr = cfg.lr;
    let mut rng = rng_for(seed, 3);
    let mut best: Option<(f64, BackboneModel, usize)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut order = split.warm_train.clone();
        order.shuffle(&mut rng);
        let triples: Vec<BprTriple> = order
            .iter()
            .filter_map(|&(u, i)| {
                sampler.sample(u, &mut rng).map(|j| BprTriple {
                    user: u,
                    pos: i,
                    neg: j,
                })
            })
            .collect();
        let mut total = 0.0;
        for batch in triples.chunks(cfg.batch_size) {
            let mut attempt = 0;
            let loss = loop {
                match bpr_step_with(&mut model, batch, lr, cfg.l2, &mut opt) {
                    Ok(l) => break l,
                    Err(Error::Divergence(_)) if attempt < MAX_LR_HALVINGS => {
                        attempt += 1;
                        lr *= 0.5;
                        log::warn!("backbone loss diverged at epoch {epoch}; lr halved to {lr:e}");
                    }
                    Err(e) => return Err(e),
                }
            };
            total += loss * batch.len() as f64;
        }
        model.trained_epochs = epoch;
        let loss = if triples.is_empty() {
            0.0
        } else {
            total / triples.len() as f64
        };

        let val_ndcg = (!val_users.is_empty()).then(|| {
            mean_metrics(
                &model,
                &val_users,
                &split.warm_items,
                &val_by_user,
                &train_by_user,
                cfg.eval_k,
            )
            .1
        });
        history.push(EpochStats {
            epoch,
            loss,
            val_ndcg,
        });
        log::debug!("backbone epoch {epoch}: loss {loss:.5} val ndcg {val_ndcg:?}");

        if let Some(ndcg) = val_ndcg {
            if best.as_ref().is_none_or(|(b, _, _)| ndcg > *b) {
                best = Some((ndcg, model.clone(), epoch));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }

    Ok(match best {
        Some((ndcg, m, epoch)) => TrainOutcome {
            model: m,
            history,
            best_epoch: epoch,
            best_val_ndcg: Some(ndcg),
        },
        None => {
            let epoch = model.trained_epochs;
            TrainOutcome {
                model,
                history,
                best_epoch: epoch,
                best_val_ndcg: None,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_cold_split, InteractionLog};

    fn triple(u: u32, i: u32, j: u32) -> BprTriple {
        BprTriple {
            user: UserId(u),
            pos: ItemId(i),
            neg: ItemId(j),
        }
    }

    #[test]
    fn init_is_deterministic_and_scaled() {
        assert_eq!(init_embeddings(0, 200, 3).rows(), 0);
        assert_eq!(init_embeddings(5, 200, 7), init_embeddings(5, 200, 7));
        let t = init_embeddings(10_000, 200, 1);
        let n = t.as_slice().len() as f64;
        let mean = t.as_slice().iter().sum::<f64>() / n;
        let var = t.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * 0.01 / n.sqrt(), "mean {mean}");
        assert!((0.009..=0.011).contains(&var.sqrt()), "std {}", var.sqrt());
    }

    #[test]
    fn score_cases() {
        let mut m = BackboneModel::init(2, 3, 4, 0);
        m.users.row_mut(0).fill(0.0);
        for i in 0..3 {
            assert_eq!(m.score(UserId(0), ItemId(i)).unwrap(), 0.0);
        }
        m.users.set_row(1, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        m.items.set_row(2, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.score(UserId(1), ItemId(2)).unwrap(), 1.0);
        assert!(matches!(
            m.score(UserId(2), ItemId(0)),
            Err(Error::OutOfBounds { kind: "user", .. })
        ));
        assert!(matches!(
            m.score(UserId(0), ItemId(3)),
            Err(Error::OutOfBounds { kind: "item", .. })
        ));
    }

    #[test]
    fn equal_scores_give_ln2() {
        let mut m = BackboneModel::init(1, 2, 3, 0);
        let row = m.items.row(0).to_vec();
        m.items.set_row(1, &row).unwrap();
        let l = bpr_loss(&m, &[triple(0, 0, 1)]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn large_margin_gives_zero_loss() {
        let mut m = BackboneModel::init(1, 2, 1, 0);
        m.users.set_row(0, &[1.0]).unwrap();
        m.items.set_row(0, &[1e3]).unwrap();
        m.items.set_row(1, &[-1e3]).unwrap();
        assert!(bpr_loss(&m, &[triple(0, 0, 1)]) < 1e-300);
    }

    #[test]
    fn zero_lr_is_a_no_op_and_updates_are_sparse() {
        let mut m = BackboneModel::init(4, 6, 5, 9);
        let before = m.clone();
        let batch = [triple(1, 2, 3), triple(1, 4, 3)];
        bpr_step(&mut m, &batch, 0.0).unwrap();
        assert_eq!(m, before);
        bpr_step(&mut m, &batch, 0.5).unwrap();
        for u in 0..4 {
            assert_eq!(
                m.users.row(u) == before.users.row(u),
                u != 1,
                "user row {u}"
            );
        }
        for i in 0..6 {
            assert_eq!(
                m.items.row(i) == before.items.row(i),
                ![2, 3, 4].contains(&i),
                "item row {i}"
            );
        }
    }

    #[test]
    fn step_returns_pre_step_loss() {
        let mut m = BackboneModel::init(2, 3, 4, 1);
        let batch = [triple(0, 1, 2)];
        let expected = bpr_loss(&m, &batch);
        assert_eq!(bpr_step(&mut m, &batch, 1.0).unwrap(), expected);
        assert!(bpr_loss(&m, &batch) < expected);
    }

    #[test]
    fn out_of_bounds_triple() {
        let mut m = BackboneModel::init(1, 2, 2, 0);
        assert!(bpr_step(&mut m, &[triple(0, 0, 5)], 0.1).is_err());
    }

    #[test]
    fn divergence_leaves_model_untouched() {
        let mut m = BackboneModel::init(1, 2, 1, 0);
        m.users.set_row(0, &[f64::NAN]).unwrap();
        let before = m.users.row(0)[0].to_bits();
        assert!(matches!(
            bpr_step(&mut m, &[triple(0, 0, 1)], 0.1),
            Err(Error::Divergence(_))
        ));
        assert_eq!(m.users.row(0)[0].to_bits(), before);
    }

    #[test]
    fn sampler_single_pair() {
        let train = [(UserId(0), ItemId(1))];
        let warm = [ItemId(0), ItemId(1), ItemId(2)];
        let ts = sample_bpr_triples(&train, 1, &warm, 500, 4).unwrap();
        assert_eq!(ts.len(), 500);
        for t in &ts {
            assert_eq!((t.user, t.pos), (UserId(0), ItemId(1)));
            assert!(t.neg == ItemId(0) || t.neg == ItemId(2));
        }
        assert!(sample_bpr_triples(&train, 1, &warm, 0, 4)
            .unwrap()
            .is_empty());
        assert!(matches!(
            sample_bpr_triples(&[], 1, &warm, 3, 4),
            Err(Error::NoPositives)
        ));
    }

    #[test]
    fn saturated_user_is_skipped() {
        let train = [(UserId(0), ItemId(0)), (UserId(0), ItemId(1))];
        let ts = sample_bpr_triples(&train, 1, &[ItemId(0), ItemId(1)], 10, 0).unwrap();
        assert!(ts.is_empty());
    }

    #[test]
    fn negatives_are_uniform() {
        // user 0 has seen items 0 and 1; the other 8 warm items are eligible
        let train = [(UserId(0), ItemId(0)), (UserId(0), ItemId(1))];
        let warm: Vec<ItemId> = (0..10).map(ItemId).collect();
        let n = 100_000;
        let ts = sample_bpr_triples(&train, 1, &warm, n, 21).unwrap();
        let mut counts = [0f64; 10];
        for t in &ts {
            counts[t.neg.index()] += 1.0;
        }
        assert_eq!(counts[0] + counts[1], 0.0);
        let expected = n as f64 / 8.0;
        let chi2: f64 = counts[2..]
            .iter()
            .map(|c| (c - expected).powi(2) / expected)
            .sum();
        // chi-square critical value, 7 degrees of freedom, p = 0.01
        assert!(chi2 < 18.475, "chi2 = {chi2}");
    }

    fn two_block_log(n_users: u32, n_items: u32) -> InteractionLog {
        let pairs = (0..n_users).flat_map(|u| {
            (0..n_items)
                .filter(move |i| (u % 2 == i % 2) && (u * 31 + i * 17) % 3 != 0)
                .map(move |i| (UserId(u), ItemId(i)))
        });
        InteractionLog::new(n_users as usize, n_items as usize, pairs).unwrap()
    }

    #[test]
    fn zero_epochs_returns_init() {
        let log = two_block_log(10, 10);
        let split = make_cold_split(&log, 0.0, 1).unwrap();
        let cfg = BackboneConfig {
            dim: 8,
            max_epochs: 0,
            ..Default::default()
        };
        let out = train_backbone(&split, &cfg, 5).unwrap();
        assert_eq!(out.model, BackboneModel::init(10, 10, 8, 5));
    }

    #[test]
    fn training_separates_blocks_and_reduces_loss() {
        let log = two_block_log(40, 30);
        let split = make_cold_split(&log, 0.0, 2).unwrap();
        let cfg = BackboneConfig {
            dim: 16,
            lr: 0.01,
            batch_size: 64,
            max_epochs: 20,
            patience: 100,
            ..Default::default()
        };
        let out = train_backbone(&split, &cfg, 3).unwrap();
        assert!(out.history.last().unwrap().loss < out.history[0].loss);
        let m = &out.model;
        let (mut within, mut cross, mut nw, mut nc) = (0.0, 0.0, 0.0, 0.0);
        for u in 0..40u32 {
            for i in 0..30u32 {
                let s = m.score(UserId(u), ItemId(i)).unwrap();
                if u % 2 == i % 2 {
                    within += s;
                    nw += 1.0;
                } else {
                    cross += s;
                    nc += 1.0;
                }
            }
        }
        assert!(within / nw > cross / nc);
    }

    #[test]
    fn training_is_deterministic() {
        let log = two_block_log(20, 16);
        let split = make_cold_split(&log, 0.1, 2).unwrap();
        let cfg = BackboneConfig {
            dim: 8,
            lr: 0.01,
            batch_size: 16,
            max_epochs: 5,
            ..Default::default()
        };
        let a = train_backbone(&split, &cfg, 9).unwrap();
        let b = train_backbone(&split, &cfg, 9).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn save_and_load() {
        let m = BackboneModel::init(3, 4, 5, 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.cemb");
        m.save(&p).unwrap();
        let back = BackboneModel::load(&p).unwrap();
        let mut q = m.clone();
        q.users.quantize();
        q.items.quantize();
        assert_eq!(back, q);
    }
}
