use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ColdWarmSplit;
use crate::error::{Error, Result};
use crate::ids::{ItemId, Pair, UserId};
use crate::math::rng_for;
use crate::topk::select_top_k;

use super::metrics::{ndcg_at_k, recall_at_k};

/// Anything that scores a (user, item) pair; higher ranks earlier.
pub trait Scorer: Sync {
    fn score(&self, user: UserId, item: ItemId) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Overall,
    Warm,
    Cold,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Overall, Task::Warm, Task::Cold];

    pub fn name(self) -> &'static str {
        match self {
            Task::Overall => "overall",
            Task::Warm => "warm",
            Task::Cold => "cold",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overall" => Ok(Task::Overall),
            "warm" => Ok(Task::Warm),
            "cold" => Ok(Task::Cold),
            _ => Err(Error::InvalidArgument(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub k: usize,
    pub users: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 20,
            users: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: Task,
    pub recall: f64,
    pub ndcg: f64,
    pub users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub user_sample: usize,
    pub seed: u64,
    pub config_fingerprint: String,
    pub tasks: Vec<TaskMetrics>,
}

impl EvalReport {
    pub fn task(&self, task: Task) -> Option<&TaskMetrics> {
        self.tasks.iter().find(|t| t.task == task)
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<8} {:>10} {:>10} {:>7}\n",
            "task",
            format!("Recall@{}", self.k),
            format!("NDCG@{}", self.k),
            "users"
        );
        for t in &self.tasks {
            s.push_str(&format!(
                "{:<8} {:>10.4} {:>10.4} {:>7}\n",
                t.task.name(),
                t.recall,
                t.ndcg,
                t.users
            ));
        }
        s
    }
}

/// Candidate pool, relevance and exclusions for one task, indexed by user.
pub struct TaskView {
    pub task: Task,
    pub pool: Vec<ItemId>,
    pub relevant: Vec<Vec<ItemId>>,
    pub exclude: Vec<Vec<ItemId>>,
}

impl TaskView {
    pub fn new(split: &ColdWarmSplit, task: Task) -> Self {
        let test: Vec<Pair> = match task {
            Task::Overall => split
                .warm_test
                .iter()
                .chain(&split.cold_test)
                .copied()
                .collect(),
            Task::Warm => split.warm_test.clone(),
            Task::Cold => split.cold_test.clone(),
        };
        let mut pool: Vec<ItemId> = test.iter().map(|p| p.1).collect();
        pool.sort_unstable();
        pool.dedup();
        Self {
            task,
            pool,
            relevant: split.by_user(&test),
            exclude: split.by_user(&split.warm_train),
        }
    }

    pub fn eligible(&self, user: UserId) -> bool {
        !self.relevant[user.index()].is_empty()
    }
}

/// Ranks `pool` for one user, skipping the sorted `exclude` list.
pub fn rank_for_user<S: Scorer + ?Sized>(
    scorer: &S,
    user: UserId,
    pool: &[ItemId],
    exclude: &[ItemId],
    k: usize,
) -> Vec<ItemId> {
    let scored = pool
        .iter()
        .filter(|i| exclude.binary_search(i).is_err())
        .map(|&i| (i, scorer.score(user, i)));
    select_top_k(scored, k)
        .into_iter()
        .map(|(i, _)| i)
        .collect()
}

/// Macro-averaged (recall, ndcg) over `users`.
pub fn mean_metrics<S: Scorer + ?Sized>(
    scorer: &S,
    users: &[UserId],
    pool: &[ItemId],
    relevant: &[Vec<ItemId>],
    exclude: &[Vec<ItemId>],
    k: usize,
) -> (f64, f64) {
    if users.is_empty() {
        return (0.0, 0.0);
    }
    let per_user: Vec<(f64, f64)> = users
        .par_iter()
        .map(|&u| {
            let ranked = rank_for_user(scorer, u, pool, &exclude[u.index()], k);
            let rel = &relevant[u.index()];
            (recall_at_k(&ranked, rel, k), ndcg_at_k(&ranked, rel, k))
        })
        .collect();
    let n = per_user.len() as f64;
    let (r, g) = per_user
        .iter()
        .fold((0.0, 0.0), |(a, b), (r, g)| (a + r, b + g));
    (r / n, g / n)
}

/// A seeded permutation of all users. Each task takes the first eligible
/// users in this order, so the three tasks share their sample as far as
/// eligibility allows.
pub fn user_order(n_users: usize, seed: u64) -> Vec<UserId> {
    let mut order: Vec<UserId> = (0..n_users).map(UserId::from).collect();
    order.shuffle(&mut rng_for(seed, 0xe7a1));
    order
}

pub fn sample_users(view: &TaskView, order: &[UserId], max_users: usize) -> Vec<UserId> {
    order
        .iter()
        .copied()
        .filter(|&u| view.eligible(u))
        .take(max_users)
        .collect()
}

pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    split: &ColdWarmSplit,
    task: Task,
    opts: &EvalOptions,
) -> Result<TaskMetrics> {
    let view = TaskView::new(split, task);
    let order = user_order(split.n_users, opts.seed);
    let users = sample_users(&view, &order, opts.users);
    if users.is_empty() {
        return Err(Error::NoEligibleUsers(task.name()));
    }
    let (recall, ndcg) = mean_metrics(
        scorer,
        &users,
        &view.pool,
        &view.relevant,
        &view.exclude,
        opts.k,
    );
    Ok(TaskMetrics {
        task,
        recall,
        ndcg,
        users: users.len(),
    })
}

/// Evaluates every task that has eligible users. Fails only when none has.
pub fn evaluate_all<S: Scorer + ?Sized>(
    scorer: &S,
    split: &ColdWarmSplit,
    opts: &EvalOptions,
    fingerprint: &str,
) -> Result<EvalReport> {
    let mut tasks = Vec::new();
    for task in Task::ALL {
        match evaluate(scorer, split, task, opts) {
            Ok(m) => tasks.push(m),
            Err(Error::NoEligibleUsers(_)) => {
                log::warn!("no eligible users for the {task} task; skipped")
            }
            Err(e) => return Err(e),
        }
    }
    if tasks.is_empty() {
        return Err(Error::NoEligibleUsers("any"));
    }
    Ok(EvalReport {
        k: opts.k,
        user_sample: opts.users,
        seed: opts.seed,
        config_fingerprint: fingerprint.to_string(),
        tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{make_cold_split, InteractionLog};
    use std::collections::HashSet;

    /// Scores 1 for a true interaction, 0 otherwise.
    struct Adjacency(HashSet<Pair>);

    impl Scorer for Adjacency {
        fn score(&self, u: UserId, i: ItemId) -> f64 {
            if self.0.contains(&(u, i)) {
                1.0
            } else {
                0.0
            }
        }
    }

    struct Random(
        crate::embedding::EmbeddingTable,
        crate::embedding::EmbeddingTable,
    );

    impl Scorer for Random {
        fn score(&self, u: UserId, i: ItemId) -> f64 {
            crate::math::dot(self.0.row(u.index()), self.1.row(i.index()))
        }
    }

    fn toy() -> (InteractionLog, ColdWarmSplit) {
        // each user likes 3 items out of 40
        let pairs = (0..60u32)
            .flat_map(|u| (0..3u32).map(move |k| (UserId(u), ItemId((u * 7 + k * 13) % 40))));
        let log = InteractionLog::new(60, 40, pairs).unwrap();
        let split = make_cold_split(&log, 0.25, 11).unwrap();
        (log, split)
    }

    #[test]
    fn adjacency_scorer_is_perfect() {
        let (_, split) = toy();
        // validation pairs stay in the pool unexcluded, so only test pairs score
        let oracle = Adjacency(
            split
                .warm_test
                .iter()
                .chain(&split.cold_test)
                .copied()
                .collect(),
        );
        let report = evaluate_all(&oracle, &split, &EvalOptions::default(), "t").unwrap();
        assert_eq!(report.tasks.len(), 3);
        for t in &report.tasks {
            assert_eq!((t.recall, t.ndcg), (1.0, 1.0), "{t:?}");
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let (_, split) = toy();
        let m = Random(
            crate::embedding::EmbeddingTable::random_normal(60, 8, 1),
            crate::embedding::EmbeddingTable::random_normal(40, 8, 2),
        );
        let opts = EvalOptions {
            seed: 3,
            ..Default::default()
        };
        assert_eq!(
            evaluate_all(&m, &split, &opts, "x").unwrap(),
            evaluate_all(&m, &split, &opts, "x").unwrap()
        );
    }

    #[test]
    fn no_eligible_users() {
        let log = InteractionLog::new(2, 2, [(UserId(0), ItemId(0))]).unwrap();
        let split = make_cold_split(&log, 0.0, 0).unwrap();
        let m = Adjacency(HashSet::new());
        assert!(matches!(
            evaluate(&m, &split, Task::Cold, &EvalOptions::default()),
            Err(Error::NoEligibleUsers("cold"))
        ));
    }

    #[test]
    fn task_pools() {
        let (_, split) = toy();
        let cold = TaskView::new(&split, Task::Cold);
        assert!(cold.pool.iter().all(|i| split.is_cold(*i)));
        let warm = TaskView::new(&split, Task::Warm);
        assert!(warm.pool.iter().all(|i| !split.is_cold(*i)));
        let overall = TaskView::new(&split, Task::Overall);
        assert_eq!(overall.pool.len(), cold.pool.len() + warm.pool.len());
    }
}
