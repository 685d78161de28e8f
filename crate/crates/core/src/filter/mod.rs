//! Two-tower filters mapping users and item content into a shared space,
//! exact top-K candidate retrieval and the funnel merge of two filters.

mod mlp;
mod train;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::BackboneModel;
use crate::corpus::{read_json, write_json};
use crate::embedding::{load_tables, save_tables, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::ids::{ItemId, UserId};
use crate::math::{derive_seed, dot};
use crate::topk::{merge_top_k, select_top_k};

pub use mlp::{Activations, TowerMlp};
pub use train::{
    behavior_gradients, behavior_loss, coupled_gradients, coupled_loss, sample_label_pairs,
    train_behavior_filter, train_coupled_filter, FilterConfig, FilterEpoch, FilterGrads,
    FilterTrainOutcome, LabeledPair,
};

/// Default number of candidates kept per cold item.
pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Behavior filter, trained on real interactions.
    B,
    /// Coupled filter, trained to imitate the oracle.
    L,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::B => "B",
            Variant::L => "L",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "B" | "b" => Ok(Variant::B),
            "L" | "l" => Ok(Variant::L),
            _ => Err(Error::InvalidArgument(format!(
                "unknown filter variant {s:?} (expected B or L)"
            ))),
        }
    }
}

/// Frozen tower inputs: per user `[e_u ‖ mean content of the user's
/// warm-train history]`, per item its raw content vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterInputs {
    users: EmbeddingTable,
    items: EmbeddingTable,
}

/// Mean of the content rows of `items`; zeros for an empty history.
pub fn history_mean(content: &EmbeddingTable, items: &[ItemId]) -> Vec<f64> {
    let mut m = vec![0.0; content.dim()];
    if items.is_empty() {
        return m;
    }
    for &i in items {
        crate::math::axpy(1.0, content.row(i.index()), &mut m);
    }
    let n = items.len() as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

impl FilterInputs {
    pub fn new(
        backbone: &BackboneModel,
        content: &EmbeddingTable,
        histories: &[Vec<ItemId>],
    ) -> Result<Self> {
        if content.rows() != backbone.n_items() {
            return Err(Error::DimMismatch {
                expected: backbone.n_items(),
                actual: content.rows(),
            });
        }
        if histories.len() != backbone.n_users() {
            return Err(Error::DimMismatch {
                expected: backbone.n_users(),
                actual: histories.len(),
            });
        }
        let width = backbone.dim() + content.dim();
        let mut users = EmbeddingTable::zeros(backbone.n_users(), width);
        for (u, hist) in histories.iter().enumerate() {
            let row = users.row_mut(u);
            row[..backbone.dim()].copy_from_slice(backbone.user(UserId::from(u)));
            row[backbone.dim()..].copy_from_slice(&history_mean(content, hist));
        }
        Ok(Self {
            users,
            items: content.clone(),
        })
    }

    pub fn n_users(&self) -> usize {
        self.users.rows()
    }

    pub fn n_items(&self) -> usize {
        self.items.rows()
    }

    pub fn user_dim(&self) -> usize {
        self.users.dim()
    }

    pub fn content_dim(&self) -> usize {
        self.items.dim()
    }

    pub fn user(&self, u: UserId) -> &[f64] {
        self.users.row(u.index())
    }

    pub fn item(&self, i: ItemId) -> &[f64] {
        self.items.row(i.index())
    }

    pub fn content(&self) -> &EmbeddingTable {
        &self.items
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoTowerFilter {
    pub variant: Variant,
    pub user_tower: TowerMlp,
    pub item_tower: TowerMlp,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    variant: Variant,
    user_widths: Vec<usize>,
    item_widths: Vec<usize>,
    seed: u64,
    #[serde(default)]
    config: Option<FilterConfig>,
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl TwoTowerFilter {
    /// Randomly initialized towers: user `behavior_dim + content_dim →
    /// hidden → out`, item `content_dim → hidden → out`.
    pub fn new(
        variant: Variant,
        behavior_dim: usize,
        content_dim: usize,
        hidden: usize,
        out: usize,
        seed: u64,
    ) -> Result<Self> {
        let user_tower = TowerMlp::random(
            &[behavior_dim + content_dim, hidden, out],
            derive_seed(seed, 11),
        )?;
        let item_tower = TowerMlp::random(&[content_dim, hidden, out], derive_seed(seed, 12))?;
        Self::from_towers(variant, user_tower, item_tower, seed)
    }

    pub fn from_towers(
        variant: Variant,
        user_tower: TowerMlp,
        item_tower: TowerMlp,
        seed: u64,
    ) -> Result<Self> {
        if user_tower.output_dim() != item_tower.output_dim() {
            return Err(Error::DimMismatch {
                expected: user_tower.output_dim(),
                actual: item_tower.output_dim(),
            });
        }
        Ok(Self {
            variant,
            user_tower,
            item_tower,
            seed,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.item_tower.output_dim()
    }

    /// `f_i = F_I(raw)`.
    pub fn map_item(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.item_tower.forward(raw)
    }

    /// `F_U([e_u ‖ history_content])`.
    pub fn map_user(&self, e_u: &[f64], history_content: &[f64]) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(e_u.len() + history_content.len());
        x.extend_from_slice(e_u);
        x.extend_from_slice(history_content);
        self.user_tower.forward(&x)
    }

    pub fn map_all_users(&self, inputs: &FilterInputs) -> Result<EmbeddingTable> {
        let rows: Result<Vec<Vec<f64>>> = (0..inputs.n_users())
            .into_par_iter()
            .map(|u| self.user_tower.forward(inputs.user(UserId::from(u))))
            .collect();
        EmbeddingTable::from_rows(self.out_dim(), &rows?)
    }

    pub fn map_all_items(&self, inputs: &FilterInputs) -> Result<EmbeddingTable> {
        let rows: Result<Vec<Vec<f64>>> = (0..inputs.n_items())
            .into_par_iter()
            .map(|i| self.item_tower.forward(inputs.item(ItemId::from(i))))
            .collect();
        EmbeddingTable::from_rows(self.out_dim(), &rows?)
    }

    pub fn save(&self, path: impl AsRef<Path>, config: Option<&FilterConfig>) -> Result<()> {
        let path = path.as_ref();
        let tables: Vec<EmbeddingTable> = self
            .user_tower
            .to_tables()
            .into_iter()
            .chain(self.item_tower.to_tables())
            .collect();
        save_tables(path, &tables.iter().collect::<Vec<_>>())?;
        let manifest = Manifest {
            variant: self.variant,
            user_widths: self.user_tower.widths().to_vec(),
            item_widths: self.item_tower.widths().to_vec(),
            seed: self.seed,
            config: config.cloned(),
        };
        write_json(manifest_path(path), &manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let m: Manifest = read_json(manifest_path(path))?;
        let tables = load_tables(path)?;
        let n_user = 2 * (m.user_widths.len().saturating_sub(1));
        if tables.len() < n_user {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: "missing tower tables".into(),
            });
        }
        let user_tower = TowerMlp::from_tables(&m.user_widths, &tables[..n_user])?;
        let item_tower = TowerMlp::from_tables(&m.item_widths, &tables[n_user..])?;
        Self::from_towers(m.variant, user_tower, item_tower, m.seed)
    }
}

/// Scores `(u, i)` as the dot product of precomputed mapped vectors.
pub struct FilterScorer {
    pub users: EmbeddingTable,
    pub items: EmbeddingTable,
}

impl FilterScorer {
    pub fn new(filter: &TwoTowerFilter, inputs: &FilterInputs) -> Result<Self> {
        Ok(Self {
            users: filter.map_all_users(inputs)?,
            items: filter.map_all_items(inputs)?,
        })
    }
}

impl Scorer for FilterScorer {
    fn score(&self, user: UserId, item: ItemId) -> f64 {
        dot(self.users.row(user.index()), self.items.row(item.index()))
    }
}

/// Mapped user vectors of one filter, searched exactly for top-K inner
/// products. The scan is split into chunks searched in parallel and merged;
/// the result is identical to a full sort under the tie rule.
pub struct UserIndex {
    vectors: EmbeddingTable,
}

const INDEX_CHUNK: usize = 1024;

impl UserIndex {
    pub fn build(filter: &TwoTowerFilter, inputs: &FilterInputs) -> Result<Self> {
        Ok(Self {
            vectors: filter.map_all_users(inputs)?,
        })
    }

    pub fn from_table(vectors: EmbeddingTable) -> Self {
        Self { vectors }
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn vectors(&self) -> &EmbeddingTable {
        &self.vectors
    }

    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<(UserId, f64)>> {
        if query.len() != self.vectors.dim() {
            return Err(Error::DimMismatch {
                expected: self.vectors.dim(),
                actual: query.len(),
            });
        }
        let n = self.vectors.rows();
        if n <= INDEX_CHUNK {
            return Ok(self.scan(0, n, query, k));
        }
        let starts: Vec<usize> = (0..n).step_by(INDEX_CHUNK).collect();
        let lists: Vec<Vec<(UserId, f64)>> = starts
            .par_iter()
            .map(|&s| self.scan(s, (s + INDEX_CHUNK).min(n), query, k))
            .collect();
        Ok(merge_top_k(lists, k))
    }

    fn scan(&self, start: usize, end: usize, query: &[f64], k: usize) -> Vec<(UserId, f64)> {
        select_top_k(
            (start..end).map(|u| (UserId::from(u), dot(self.vectors.row(u), query))),
            k,
        )
    }

    /// Reference path: score everyone and sort.
    pub fn brute_force(&self, query: &[f64], k: usize) -> Vec<(UserId, f64)> {
        let mut all: Vec<(UserId, f64)> = (0..self.vectors.rows())
            .map(|u| (UserId::from(u), dot(self.vectors.row(u), query)))
            .collect();
        all.sort_by(crate::topk::rank_order);
        all.truncate(k);
        all
    }
}

/// Ranked candidate users for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub item: ItemId,
    pub users: Vec<UserId>,
    /// Non-increasing. Dot products for a single filter; `1 / (1 + rank)`
    /// after a two-filter merge, whose inputs are not on a common scale.
    pub scores: Vec<f64>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// A trained filter with its precomputed user index.
#[derive(Clone, Copy)]
pub struct FilterHandle<'a> {
    pub filter: &'a TwoTowerFilter,
    pub index: &'a UserIndex,
}

pub fn topk_candidates(
    handle: FilterHandle<'_>,
    item: ItemId,
    raw: &[f64],
    k: usize,
) -> Result<CandidateSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let f_i = handle.filter.map_item(raw)?;
    let ranked = handle.index.top_k(&f_i, k)?;
    Ok(CandidateSet {
        item,
        users: ranked.iter().map(|r| r.0).collect(),
        scores: ranked.iter().map(|r| r.1).collect(),
    })
}

/// Interleaves two rankings (`l` first), skipping repeats, until `k` users
/// are collected or both are exhausted.
pub fn funnel_merge(l: Option<&[UserId]>, b: Option<&[UserId]>, k: usize) -> Vec<UserId> {
    let (l, b) = (l.unwrap_or(&[]), b.unwrap_or(&[]));
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(k);
    for r in 0..l.len().max(b.len()) {
        for list in [l, b] {
            if out.len() == k {
                return out;
            }
            if let Some(&u) = list.get(r) {
                if seen.insert(u) {
                    out.push(u);
                }
            }
        }
    }
    out
}

/// Funnel filtering of one item: each present filter contributes its top-K
/// and the lists are merged by [`funnel_merge`].
pub fn funnel_filter(
    l: Option<FilterHandle<'_>>,
    b: Option<FilterHandle<'_>>,
    item: ItemId,
    raw: &[f64],
    k: usize,
) -> Result<CandidateSet> {
    match (l, b) {
        (None, None) => Err(Error::VariantMismatch {
            variant: "funnel".into(),
            component: "at least one filter",
        }),
        (Some(h), None) | (None, Some(h)) => topk_candidates(h, item, raw, k),
        (Some(hl), Some(hb)) => {
            let cl = topk_candidates(hl, item, raw, k)?;
            let cb = topk_candidates(hb, item, raw, k)?;
            let users = funnel_merge(Some(&cl.users), Some(&cb.users), k);
            let scores = (0..users.len()).map(|r| 1.0 / (1.0 + r as f64)).collect();
            Ok(CandidateSet {
                item,
                users,
                scores,
            })
        }
    }
}
