use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{BprTriple, NegativeSampler};
use crate::corpus::ColdWarmSplit;
use crate::error::{Error, Result};
use crate::eval::{mean_metrics, user_order};
use crate::ids::{ItemId, Pair, UserId};
use crate::math::{dot, log_sigmoid, rng_for, sigmoid};
use crate::optim::Adam;

use super::mlp::Activations;
use super::{FilterInputs, FilterScorer, TwoTowerFilter};

/// Probability clip applied before the logarithms of the cross-entropy.
const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Weight of the BPR term in the coupled loss.
    pub lambda: f64,
    /// Oracle-labeled pairs drawn for the coupled filter (half observed,
    /// half unobserved).
    pub label_pairs: usize,
    /// Candidates kept per cold item.
    pub top_k: usize,
    pub eval_users: usize,
    pub eval_k: usize,
    /// Hook for an additional alignment loss; no such loss is implemented.
    pub extra_align_loss: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            hidden: 200,
            lr: 1e-5,
            batch_size: 128,
            max_epochs: 100,
            patience: 10,
            lambda: 1.0,
            label_pairs: 4000,
            top_k: super::DEFAULT_TOP_K,
            eval_users: 2000,
            eval_k: 20,
            extra_align_loss: false,
        }
    }
}

/// An oracle label `z ∈ {0, 1}` for a (user, item) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub user: UserId,
    pub item: ItemId,
    pub z: u8,
}

/// Gradients in the flat parameter layout of each tower.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGrads {
    pub user: Vec<f64>,
    pub item: Vec<f64>,
}

/// Forward passes for every distinct user and item of a batch, plus the
/// accumulated gradient with respect to each tower output.
struct Batch<'a> {
    filter: &'a TwoTowerFilter,
    users: BTreeMap<UserId, (Activations, Vec<f64>)>,
    items: BTreeMap<ItemId, (Activations, Vec<f64>)>,
}

impl<'a> Batch<'a> {
    fn new(
        filter: &'a TwoTowerFilter,
        inputs: &FilterInputs,
        users: impl IntoIterator<Item = UserId>,
        items: impl IntoIterator<Item = ItemId>,
    ) -> Result<Self> {
        let d = filter.out_dim();
        let mut b = Self {
            filter,
            users: BTreeMap::new(),
            items: BTreeMap::new(),
        };
        for u in users {
            if let Entry::Vacant(e) = b.users.entry(u) {
                check(u.index(), inputs.n_users(), "user")?;
                e.insert((
                    filter.user_tower.forward_cached(inputs.user(u))?,
                    vec![0.0; d],
                ));
            }
        }
        for i in items {
            if let Entry::Vacant(e) = b.items.entry(i) {
                check(i.index(), inputs.n_items(), "item")?;
                e.insert((
                    filter.item_tower.forward_cached(inputs.item(i))?,
                    vec![0.0; d],
                ));
            }
        }
        Ok(b)
    }

    fn u(&self, u: UserId) -> &[f64] {
        self.users[&u].0.output()
    }

    fn i(&self, i: ItemId) -> &[f64] {
        self.items[&i].0.output()
    }

    /// Adds `g · d(p_u · q_i)` to the output gradients.
    fn add_dot_grad(&mut self, u: UserId, i: ItemId, g: f64) {
        let p = self.u(u).to_vec();
        let q = self.i(i).to_vec();
        crate::math::axpy(g, &q, &mut self.users.get_mut(&u).unwrap().1);
        crate::math::axpy(g, &p, &mut self.items.get_mut(&i).unwrap().1);
    }

    fn backward(self) -> FilterGrads {
        let mut grads = FilterGrads {
            user: vec![0.0; self.filter.user_tower.params().len()],
            item: vec![0.0; self.filter.item_tower.params().len()],
        };
        for (acts, g) in self.users.values() {
            self.filter.user_tower.backward(acts, g, &mut grads.user);
        }
        for (acts, g) in self.items.values() {
            self.filter.item_tower.backward(acts, g, &mut grads.item);
        }
        grads
    }
}

fn check(id: usize, len: usize, kind: &'static str) -> Result<()> {
    if id >= len {
        return Err(Error::OutOfBounds { kind, id, len });
    }
    Ok(())
}

fn triple_ids(triples: &[BprTriple]) -> (Vec<UserId>, Vec<ItemId>) {
    (
        triples.iter().map(|t| t.user).collect(),
        triples.iter().flat_map(|t| [t.pos, t.neg]).collect(),
    )
}

/// Mean BPR loss `-mean ln σ(p_u·q_i − p_u·q_j)` in the filter space.
pub fn behavior_loss(
    filter: &TwoTowerFilter,
    inputs: &FilterInputs,
    triples: &[BprTriple],
) -> Result<f64> {
    Ok(behavior_gradients(filter, inputs, triples)?.0)
}

pub fn behavior_gradients(
    filter: &TwoTowerFilter,
    inputs: &FilterInputs,
    triples: &[BprTriple],
) -> Result<(f64, FilterGrads)> {
    let (us, is) = triple_ids(triples);
    let mut batch = Batch::new(filter, inputs, us, is)?;
    let loss = bpr_terms(&mut batch, triples, 1.0);
    finish(loss, batch)
}

/// Accumulates `weight · mean BPR` into the batch and returns that value.
fn bpr_terms(batch: &mut Batch<'_>, triples: &[BprTriple], weight: f64) -> f64 {
    if triples.is_empty() {
        return 0.0;
    }
    let n = triples.len() as f64;
    let mut loss = 0.0;
    for t in triples {
        let p = batch.u(t.user);
        let x = dot(p, batch.i(t.pos)) - dot(p, batch.i(t.neg));
        loss -= log_sigmoid(x);
        let g = -weight * sigmoid(-x) / n;
        batch.add_dot_grad(t.user, t.pos, g);
        batch.add_dot_grad(t.user, t.neg, -g);
    }
    weight * loss / n
}

/// Mean clipped binary cross-entropy of `σ(p_u·q_i)` against the labels plus
/// `lambda` times the mean BPR loss over `triples`.
pub fn coupled_loss(
    filter: &TwoTowerFilter,
    inputs: &FilterInputs,
    labels: &[LabeledPair],
    triples: &[BprTriple],
    lambda: f64,
) -> Result<f64> {
    Ok(coupled_gradients(filter, inputs, labels, triples, lambda)?.0)
}

pub fn coupled_gradients(
    filter: &TwoTowerFilter,
    inputs: &FilterInputs,
    labels: &[LabeledPair],
    triples: &[BprTriple],
    lambda: f64,
) -> Result<(f64, FilterGrads)> {
    let (mut us, mut is) = triple_ids(triples);
    us.extend(labels.iter().map(|l| l.user));
    is.extend(labels.iter().map(|l| l.item));
    let mut batch = Batch::new(filter, inputs, us, is)?;
    let mut loss = 0.0;
    if !labels.is_empty() {
        let n = labels.len() as f64;
        let mut ce = 0.0;
        for l in labels {
            let s = dot(batch.u(l.user), batch.i(l.item));
            let z = f64::from(l.z);
            let y = sigmoid(s);
            let p = y.clamp(PROB_EPS, 1.0 - PROB_EPS);
            ce -= z * p.ln() + (1.0 - z) * (1.0 - p).ln();
            // the clip is flat outside its range
            if y == p {
                batch.add_dot_grad(l.user, l.item, (y - z) / n);
            }
        }
        loss += ce / n;
    }
    if lambda != 0.0 {
        loss += bpr_terms(&mut batch, triples, lambda);
    }
    finish(loss, batch)
}

fn finish(loss: f64, batch: Batch<'_>) -> Result<(f64, FilterGrads)> {
    if !loss.is_finite() {
        return Err(Error::Divergence(loss));
    }
    Ok((loss, batch.backward()))
}

struct FilterAdam {
    user: Adam,
    item: Adam,
}

impl FilterAdam {
    fn new(f: &TwoTowerFilter) -> Self {
        Self {
            user: Adam::new(f.user_tower.params().len()),
            item: Adam::new(f.item_tower.params().len()),
        }
    }

    fn apply(&mut self, f: &mut TwoTowerFilter, g: &FilterGrads, lr: f64) {
        self.user.step(f.user_tower.params_mut(), &g.user, lr);
        self.item.step(f.item_tower.params_mut(), &g.item, lr);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub val_ndcg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterTrainOutcome {
    pub history: Vec<FilterEpoch>,
    pub best_epoch: usize,
    pub best_val_ndcg: Option<f64>,
}

/// Warm-val NDCG of filter-ranked warm items, on a fixed user sample.
struct Validator {
    users: Vec<UserId>,
    val: Vec<Vec<ItemId>>,
    train: Vec<Vec<ItemId>>,
    pool: Vec<ItemId>,
    k: usize,
}

impl Validator {
    fn new(split: &ColdWarmSplit, cfg: &FilterConfig, seed: u64) -> Self {
        let val = split.by_user(&split.warm_val);
        let users = user_order(split.n_users, seed)
            .into_iter()
            .filter(|u| !val[u.index()].is_empty())
            .take(cfg.eval_users)
            .collect();
        Self {
            users,
            val,
            train: split.by_user(&split.warm_train),
            pool: split.warm_items.clone(),
            k: cfg.eval_k,
        }
    }

    fn ndcg(&self, filter: &TwoTowerFilter, inputs: &FilterInputs) -> Result<Option<f64>> {
        if self.users.is_empty() {
            return Ok(None);
        }
        let scorer = FilterScorer::new(filter, inputs)?;
        Ok(Some(
            mean_metrics(
                &scorer,
                &self.users,
                &self.pool,
                &self.val,
                &self.train,
                self.k,
            )
            .1,
        ))
    }
}

/// Keeps the best snapshot by validation NDCG and decides when to stop.
struct EarlyStop {
    best: Option<(f64, TwoTowerFilter, usize)>,
    since_best: usize,
    patience: usize,
}

impl EarlyStop {
    /// Returns true when training should stop.
    fn observe(&mut self, ndcg: Option<f64>, filter: &TwoTowerFilter, epoch: usize) -> bool {
        let Some(ndcg) = ndcg else { return false };
        if self.best.as_ref().is_none_or(|(b, _, _)| ndcg > *b) {
            self.best = Some((ndcg, filter.clone(), epoch));
            self.since_best = 0;
            false
        } else {
            self.since_best += 1;
            self.since_best >= self.patience
        }
    }

    fn finish(self, filter: &mut TwoTowerFilter, history: Vec<FilterEpoch>) -> FilterTrainOutcome {
        match self.best {
            Some((ndcg, best, epoch)) => {
                *filter = best;
                FilterTrainOutcome {
                    history,
                    best_epoch: epoch,
                    best_val_ndcg: Some(ndcg),
                }
            }
            None => FilterTrainOutcome {
                best_epoch: history.len(),
                history,
                best_val_ndcg: None,
            },
        }
    }
}

fn validate_cfg(cfg: &FilterConfig) -> Result<()> {
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "filter batch_size must be positive".into(),
        ));
    }
    if cfg.extra_align_loss {
        log::warn!("extra_align_loss is set but no alignment loss is implemented; ignored");
    }
    Ok(())
}

/// One triple per warm-train positive, shuffled.
fn epoch_triples<R: Rng>(
    split: &ColdWarmSplit,
    sampler: &NegativeSampler,
    rng: &mut R,
) -> Vec<BprTriple> {
    let mut order = split.warm_train.clone();
    order.shuffle(rng);
    order
        .iter()
        .filter_map(|&(u, i)| {
            sampler.sample(u, rng).map(|j| BprTriple {
                user: u,
                pos: i,
                neg: j,
            })
        })
        .collect()
}

/// Trains the behavior filter with BPR on warm-train interactions; backbone
/// embeddings and content vectors are frozen inputs. Leaves `filter` at
/// the best validation snapshot.
pub fn train_behavior_filter(
    filter: &mut TwoTowerFilter,
    inputs: &FilterInputs,
    split: &ColdWarmSplit,
    cfg: &FilterConfig,
    seed: u64,
) -> Result<FilterTrainOutcome> {
    validate_cfg(cfg)?;
    if split.warm_train.is_empty() {
        return Err(Error::NoPositives);
    }
    let sampler = NegativeSampler::new(split.n_users, &split.warm_train, &split.warm_items);
    let validator = Validator::new(split, cfg, seed);
    let mut stop = EarlyStop {
        best: None,
        since_best: 0,
        patience: cfg.patience,
    };
    let mut opt = FilterAdam::new(filter);
    let mut rng = rng_for(seed, 21);
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let triples = epoch_triples(split, &sampler, &mut rng);
        let mut total = 0.0;
        for batch in triples.chunks(cfg.batch_size) {
            let (loss, g) = behavior_gradients(filter, inputs, batch)?;
            opt.apply(filter, &g, cfg.lr);
            total += loss * batch.len() as f64;
        }
        let loss = if triples.is_empty() {
            0.0
        } else {
            total / triples.len() as f64
        };
        let val_ndcg = validator.ndcg(filter, inputs)?;
        log::debug!("filter B epoch {epoch}: loss {loss:.5} val ndcg {val_ndcg:?}");
        history.push(FilterEpoch {
            epoch,
            loss,
            val_ndcg,
        });
        if stop.observe(val_ndcg, filter, epoch) {
            break;
        }
    }
    Ok(stop.finish(filter, history))
}

/// Trains the coupled filter on oracle labels (cross-entropy) plus
/// `lambda` times BPR on warm-train triples. Each label batch is paired
/// with a triple batch of the same size.
pub fn train_coupled_filter(
    filter: &mut TwoTowerFilter,
    inputs: &FilterInputs,
    labels: &[LabeledPair],
    split: &ColdWarmSplit,
    cfg: &FilterConfig,
    seed: u64,
) -> Result<FilterTrainOutcome> {
    validate_cfg(cfg)?;
    if labels.is_empty() {
        return Err(Error::NoPositives);
    }
    let sampler = NegativeSampler::new(split.n_users, &split.warm_train, &split.warm_items);
    let validator = Validator::new(split, cfg, seed);
    let mut stop = EarlyStop {
        best: None,
        since_best: 0,
        patience: cfg.patience,
    };
    let mut opt = FilterAdam::new(filter);
    let mut rng = rng_for(seed, 22);
    let mut history = Vec::new();
    let mut order = labels.to_vec();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let triples = if cfg.lambda != 0.0 {
            epoch_triples(split, &sampler, &mut rng)
        } else {
            Vec::new()
        };
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let tb: &[BprTriple] = if triples.is_empty() {
                &[]
            } else {
                let start = (b * cfg.batch_size) % triples.len();
                &triples[start..(start + batch.len()).min(triples.len())]
            };
            let (loss, g) = coupled_gradients(filter, inputs, batch, tb, cfg.lambda)?;
            opt.apply(filter, &g, cfg.lr);
            total += loss * batch.len() as f64;
        }
        let loss = total / order.len() as f64;
        let val_ndcg = validator.ndcg(filter, inputs)?;
        log::debug!("filter L epoch {epoch}: loss {loss:.5} val ndcg {val_ndcg:?}");
        history.push(FilterEpoch {
            epoch,
            loss,
            val_ndcg,
        });
        if stop.observe(val_ndcg, filter, epoch) {
            break;
        }
    }
    Ok(stop.finish(filter, history))
}

/// Distinct pairs for oracle labeling: up to `n / 2` warm-train positives
/// and the same number of uniformly drawn unobserved (user, warm item) pairs.
pub fn sample_label_pairs(split: &ColdWarmSplit, n: usize, seed: u64) -> Vec<Pair> {
    let mut rng = rng_for(seed, 23);
    let mut pos = split.warm_train.clone();
    pos.shuffle(&mut rng);
    pos.truncate(n / 2);
    let observed: HashSet<Pair> = split.warm_train.iter().copied().collect();
    let mut taken = HashSet::new();
    let mut neg = Vec::with_capacity(pos.len());
    let budget = 100 * pos.len().max(1);
    let mut tries = 0;
    while neg.len() < pos.len()
        && tries < budget
        && split.n_users > 0
        && !split.warm_items.is_empty()
    {
        tries += 1;
        let u = UserId::from(rng.random_range(0..split.n_users));
        let i = split.warm_items[rng.random_range(0..split.warm_items.len())];
        if !observed.contains(&(u, i)) && taken.insert((u, i)) {
            neg.push((u, i));
        }
    }
    pos.truncate(neg.len());
    pos.into_iter().zip(neg).flat_map(|(p, q)| [p, q]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingTable;
    use crate::filter::{TowerMlp, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(seed: u64) -> (TwoTowerFilter, FilterInputs) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users =
            EmbeddingTable::from_vec(4, 5, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
        let items =
            EmbeddingTable::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
        let f = TwoTowerFilter::new(Variant::B, 2, 3, 4, 3, seed).unwrap();
        (f, FilterInputs { users, items })
    }

    #[test]
    fn one_triple_loss_by_hand() {
        let (f, inp) = toy(1);
        let t = BprTriple {
            user: UserId(2),
            pos: ItemId(1),
            neg: ItemId(4),
        };
        let p = f.user_tower.forward(inp.user(t.user)).unwrap();
        let qi = f.item_tower.forward(inp.item(t.pos)).unwrap();
        let qj = f.item_tower.forward(inp.item(t.neg)).unwrap();
        let x: f64 = p.iter().zip(&qi).map(|(a, b)| a * b).sum::<f64>()
            - p.iter().zip(&qj).map(|(a, b)| a * b).sum::<f64>();
        let want = -(1.0 / (1.0 + (-x).exp())).ln();
        assert!((behavior_loss(&f, &inp, &[t]).unwrap() - want).abs() < 1e-8);
    }

    #[test]
    fn ce_at_half_is_ln2() {
        // zero output layers make every score 0, so σ = 0.5
        let (mut f, inp) = toy(2);
        f.user_tower = TowerMlp::zeros(&[5, 4, 3]).unwrap();
        let l = [LabeledPair {
            user: UserId(0),
            item: ItemId(0),
            z: 1,
        }];
        assert!(
            (coupled_loss(&f, &inp, &l, &[], 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15
        );
    }

    #[test]
    fn ce_floors_at_clip_for_confident_correct_scores() {
        let (mut f, inp) = toy(3);
        // bias-only towers with large aligned outputs
        f.user_tower = TowerMlp::zeros(&[5, 4, 3]).unwrap();
        f.item_tower = TowerMlp::zeros(&[3, 4, 3]).unwrap();
        let nu = f.user_tower.params().len();
        let ni = f.item_tower.params().len();
        f.user_tower.params_mut()[nu - 3] = 10.0;
        f.item_tower.params_mut()[ni - 3] = 10.0;
        let l = [LabeledPair {
            user: UserId(1),
            item: ItemId(2),
            z: 1,
        }];
        // sigma(100) is clipped to 1 - 1e-7
        let floor = -(1.0f64 - 1e-7).ln();
        assert!((coupled_loss(&f, &inp, &l, &[], 0.0).unwrap() - floor).abs() < 1e-15);
    }

    #[test]
    fn clipped_ce_is_finite() {
        let (mut f, inp) = toy(3);
        f.user_tower = TowerMlp::zeros(&[5, 4, 3]).unwrap();
        f.item_tower = TowerMlp::zeros(&[3, 4, 3]).unwrap();
        let nu = f.user_tower.params().len();
        let ni = f.item_tower.params().len();
        f.user_tower.params_mut()[nu - 3] = 100.0;
        f.item_tower.params_mut()[ni - 3] = 100.0;
        let l = [LabeledPair {
            user: UserId(1),
            item: ItemId(2),
            z: 0,
        }];
        let (loss, g) = coupled_gradients(&f, &inp, &l, &[], 0.0).unwrap();
        assert!((loss + (PROB_EPS).ln()).abs() < 1e-9);
        assert!(g.user.iter().chain(&g.item).all(|v| *v == 0.0));
    }

    #[test]
    fn lr_zero_leaves_parameters() {
        let (mut f, inp) = toy(4);
        let before = f.clone();
        let g = behavior_gradients(
            &f,
            &inp,
            &[BprTriple {
                user: UserId(0),
                pos: ItemId(1),
                neg: ItemId(2),
            }],
        )
        .unwrap()
        .1;
        FilterAdam::new(&f).apply(&mut f, &g, 0.0);
        assert_eq!(f, before);
    }

    #[test]
    fn defaults() {
        let c = FilterConfig::default();
        assert_eq!(
            (c.lr, c.batch_size, c.top_k, c.hidden),
            (1e-5, 128, 20, 200)
        );
    }

    #[test]
    fn label_pairs_are_balanced_and_distinct() {
        let log = crate::corpus::InteractionLog::new(
            10,
            10,
            (0..10u32).flat_map(|u| [(UserId(u), ItemId(u)), (UserId(u), ItemId((u + 1) % 10))]),
        )
        .unwrap();
        let split = crate::corpus::make_cold_split(&log, 0.0, 1).unwrap();
        let pairs = sample_label_pairs(&split, 20, 5);
        let observed: HashSet<Pair> = split.warm_train.iter().copied().collect();
        let n_pos = pairs.iter().filter(|p| observed.contains(p)).count();
        assert_eq!(n_pos * 2, pairs.len());
        assert_eq!(pairs.iter().collect::<HashSet<_>>().len(), pairs.len());
    }
}
