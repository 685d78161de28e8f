//! Oracle-based refinement of filtered candidates: user contexts, the
//! simulation prompt, oracle clients, the decision cache, and export of
//! fine-tuning data.

mod finetune;
mod oracle;
mod prompt;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ItemCatalog;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::filter::{funnel_filter, CandidateSet, FilterHandle, LabeledPair};
use crate::ids::{ItemId, Pair, UserId};
use crate::math::rng_for;
use crate::retry::RetryPolicy;

pub use finetune::{prepare_finetune_data, write_finetune, FinetuneMode, FinetuneRecord};
pub use oracle::{
    ConstantOracle, HttpOracle, MockThresholdOracle, Oracle, OracleDecision, OracleKind,
    OracleQuery, PlantedOracle, DEFAULT_TAU,
};
pub use prompt::{build_context, parse_answer, prompt_hash, render_prompt, DEFAULT_CONTEXT_LEN};

/// What happens when the oracle rejects every filtered candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    /// Keep the top-ranked filtered candidate.
    TopOne,
    /// Keep nobody; the item stays cold.
    LeaveCold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinerConfig {
    pub oracle: OracleKind,
    /// Acceptance threshold of the mock-threshold oracle.
    pub tau: f64,
    pub context_len: usize,
    pub max_inflight: usize,
    /// Base URL of the HTTP oracle, or the full URL with `chat`.
    pub endpoint: Option<String>,
    pub chat: bool,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    pub fallback: Fallback,
    /// Answer of the constant oracle.
    pub constant_answer: bool,
    /// Ground-truth pairs for the planted oracle (JSON list of pairs).
    pub truth_path: Option<PathBuf>,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            oracle: OracleKind::MockThreshold,
            tau: DEFAULT_TAU,
            context_len: DEFAULT_CONTEXT_LEN,
            max_inflight: 8,
            endpoint: None,
            chat: false,
            timeout_secs: 30,
            retry: RetryPolicy::default(),
            fallback: Fallback::TopOne,
            constant_answer: true,
            truth_path: None,
        }
    }
}

/// One persisted oracle judgment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub user: UserId,
    pub item: ItemId,
    pub z: u8,
    pub raw: String,
    pub oracle: OracleKind,
    pub prompt_hash: String,
}

type CacheKey = (UserId, ItemId, OracleKind, String);

/// Oracle decisions keyed by (user, item, oracle kind, prompt hash),
/// optionally backed by an append-only JSON-lines file.
pub struct DecisionCache {
    map: Mutex<HashMap<CacheKey, DecisionRecord>>,
    file: Option<(PathBuf, Mutex<BufWriter<File>>)>,
}

impl DecisionCache {
    pub fn in_memory() -> Self {
        Self {
            map: Mutex::new(HashMap::new()),
            file: None,
        }
    }

    /// Loads `path` if it exists and appends new decisions to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut map = HashMap::new();
        if path.exists() {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: DecisionRecord =
                    serde_json::from_str(&line).map_err(|e| Error::Malformed {
                        path: path.to_path_buf(),
                        line: n + 1,
                        msg: e.to_string(),
                    })?;
                map.insert(key(&r), r);
            }
        }
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            map: Mutex::new(map),
            file: Some((path.to_path_buf(), Mutex::new(BufWriter::new(f)))),
        })
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, k: &CacheKey) -> Option<DecisionRecord> {
        self.map.lock().unwrap().get(k).cloned()
    }

    fn insert(&self, r: &DecisionRecord) -> Result<()> {
        let fresh = self.map.lock().unwrap().insert(key(r), r.clone()).is_none();
        if let (true, Some((path, w))) = (fresh, &self.file) {
            let mut w = w.lock().unwrap();
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn key(r: &DecisionRecord) -> CacheKey {
    (r.user, r.item, r.oracle, r.prompt_hash.clone())
}

/// Read-only inputs for building contexts and prompts.
#[derive(Clone, Copy)]
pub struct RefineEnv<'a> {
    pub catalog: &'a ItemCatalog,
    /// Warm-train history per user.
    pub histories: &'a [Vec<ItemId>],
    /// Filter-space item vectors used to rank context items.
    pub item_vectors: &'a EmbeddingTable,
    pub context_len: usize,
}

impl RefineEnv<'_> {
    pub fn context(&self, user: UserId, item: ItemId) -> Vec<ItemId> {
        build_context(
            &self.histories[user.index()],
            item,
            self.item_vectors,
            self.context_len,
        )
    }

    pub fn prompt(&self, context: &[ItemId], item: ItemId) -> String {
        let titles: Vec<&str> = context
            .iter()
            .map(|&j| self.catalog.get(j).title.as_str())
            .collect();
        render_prompt(&titles, &self.catalog.get(item).title)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    /// Accepted users in candidate order.
    pub kept: Vec<UserId>,
    /// Decisions in candidate order; failed queries are absent.
    pub decisions: Vec<DecisionRecord>,
    pub failures: usize,
}

/// Runs oracle queries with at most `max_inflight` in flight, through the
/// decision cache.
pub struct Refiner {
    pool: rayon::ThreadPool,
    cache: DecisionCache,
}

impl Refiner {
    pub fn new(max_inflight: usize, cache: DecisionCache) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_inflight.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        Ok(Self { pool, cache })
    }

    pub fn cache(&self) -> &DecisionCache {
        &self.cache
    }

    /// Judges each pair; results are in input order.
    pub fn judge(
        &self,
        env: &RefineEnv<'_>,
        oracle: &dyn Oracle,
        pairs: &[Pair],
    ) -> Vec<Result<DecisionRecord>> {
        let results: Vec<Result<DecisionRecord>> = self.pool.install(|| {
            pairs
                .par_iter()
                .map(|&(u, i)| {
                    let context = env.context(u, i);
                    let prompt = env.prompt(&context, i);
                    let k = (u, i, oracle.kind(), prompt_hash(&prompt));
                    if let Some(hit) = self.cache.get(&k) {
                        return Ok(hit);
                    }
                    let d = oracle.decide(&OracleQuery {
                        user: u,
                        item: i,
                        context: &context,
                        prompt: &prompt,
                    })?;
                    Ok(DecisionRecord {
                        user: u,
                        item: i,
                        z: d.z,
                        raw: d.raw,
                        oracle: k.2,
                        prompt_hash: k.3,
                    })
                })
                .collect()
        });
        // cache writes happen here, in input order, so the log is reproducible
        results
            .into_iter()
            .map(|r| {
                let r = r?;
                self.cache.insert(&r)?;
                Ok(r)
            })
            .collect()
    }

    /// Keeps the candidates the oracle accepts, in their original order.
    /// Failed queries drop their user; if every query fails the first
    /// error is returned.
    pub fn refine(
        &self,
        env: &RefineEnv<'_>,
        oracle: &dyn Oracle,
        candidates: &CandidateSet,
    ) -> Result<RefineOutcome> {
        let pairs: Vec<Pair> = candidates
            .users
            .iter()
            .map(|&u| (u, candidates.item))
            .collect();
        let mut out = RefineOutcome {
            kept: Vec::new(),
            decisions: Vec::new(),
            failures: 0,
        };
        let mut first_err = None;
        for r in self.judge(env, oracle, &pairs) {
            match r {
                Ok(d) => {
                    if d.z == 1 {
                        out.kept.push(d.user);
                    }
                    out.decisions.push(d);
                }
                Err(e) => {
                    out.failures += 1;
                    first_err.get_or_insert(e);
                }
            }
        }
        if out.failures > 0 {
            if out.decisions.is_empty() {
                return Err(first_err.unwrap());
            }
            log::warn!(
                "{} of {} oracle calls failed for item {}",
                out.failures,
                pairs.len(),
                candidates.item
            );
        }
        Ok(out)
    }

    /// Oracle labels for the coupled filter; failed pairs are skipped and
    /// counted.
    pub fn label(
        &self,
        env: &RefineEnv<'_>,
        oracle: &dyn Oracle,
        pairs: &[Pair],
    ) -> Result<(Vec<LabeledPair>, usize)> {
        let mut labels = Vec::with_capacity(pairs.len());
        let mut failures = 0;
        let mut first_err = None;
        for r in self.judge(env, oracle, pairs) {
            match r {
                Ok(d) => labels.push(LabeledPair {
                    user: d.user,
                    item: d.item,
                    z: d.z,
                }),
                Err(e) => {
                    failures += 1;
                    first_err.get_or_insert(e);
                }
            }
        }
        if failures > 0 {
            if labels.is_empty() {
                return Err(first_err.unwrap());
            }
            log::warn!(
                "{failures} of {} labeling calls failed; those pairs are skipped",
                pairs.len()
            );
        }
        Ok((labels, failures))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulateOptions {
    pub k: usize,
    /// `false` skips the oracle and keeps every filtered candidate.
    pub refine: bool,
    pub fallback: Fallback,
}

/// Simulated users of one cold item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub item: ItemId,
    pub filtered: Vec<UserId>,
    pub kept: Vec<UserId>,
    pub fallback: bool,
    #[serde(skip)]
    pub decisions: Vec<DecisionRecord>,
}

/// Funnel filtering followed by refinement; an empty refinement falls back
/// per `opts.fallback`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_for_item(
    item: ItemId,
    raw: &[f64],
    l: Option<FilterHandle<'_>>,
    b: Option<FilterHandle<'_>>,
    refiner: &Refiner,
    env: &RefineEnv<'_>,
    oracle: &dyn Oracle,
    opts: &SimulateOptions,
) -> Result<Simulation> {
    let candidates = funnel_filter(l, b, item, raw, opts.k)?;
    let filtered = candidates.users.clone();
    if !opts.refine || candidates.is_empty() {
        return Ok(Simulation {
            item,
            kept: filtered.clone(),
            filtered,
            fallback: false,
            decisions: Vec::new(),
        });
    }
    let out = refiner.refine(env, oracle, &candidates)?;
    let mut sim = Simulation {
        item,
        filtered,
        kept: out.kept,
        fallback: false,
        decisions: out.decisions,
    };
    if sim.kept.is_empty() && opts.fallback == Fallback::TopOne {
        sim.kept.push(sim.filtered[0]);
        sim.fallback = true;
    }
    Ok(sim)
}

/// `k` distinct users drawn uniformly, for the random-filter baseline.
pub fn random_candidates(item: ItemId, n_users: usize, k: usize, seed: u64) -> CandidateSet {
    let mut rng = rng_for(seed, u64::from(item.0) + 0x5eed);
    let users: Vec<UserId> = sample(&mut rng, n_users, k.min(n_users))
        .into_iter()
        .map(UserId::from)
        .collect();
    let scores = vec![0.0; users.len()];
    CandidateSet {
        item,
        users,
        scores,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ItemContent;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting<O> {
        inner: O,
        calls: AtomicUsize,
    }

    impl<O: Oracle> Oracle for Counting<O> {
        fn kind(&self) -> OracleKind {
            self.inner.kind()
        }
        fn decide(&self, q: &OracleQuery<'_>) -> Result<OracleDecision> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.decide(q)
        }
    }

    /// Fails for odd users.
    struct Flaky;

    impl Oracle for Flaky {
        fn kind(&self) -> OracleKind {
            OracleKind::Http
        }
        fn decide(&self, q: &OracleQuery<'_>) -> Result<OracleDecision> {
            if q.user.0 % 2 == 1 {
                Err(Error::Transport("down".into()))
            } else {
                ConstantOracle(true).decide(q)
            }
        }
    }

    struct Fixture {
        catalog: ItemCatalog,
        histories: Vec<Vec<ItemId>>,
        vectors: EmbeddingTable,
    }

    impl Fixture {
        fn new(n_users: usize, n_items: usize) -> Self {
            let catalog = ItemCatalog::new(
                (0..n_items)
                    .map(|i| ItemContent {
                        title: format!("T{i}"),
                        content: format!("c{i}"),
                        features: vec![],
                    })
                    .collect(),
            )
            .unwrap();
            let histories = (0..n_users)
                .map(|u| vec![ItemId::from(u % n_items)])
                .collect();
            let vectors =
                EmbeddingTable::from_vec(n_items, 1, (0..n_items).map(|i| i as f64).collect())
                    .unwrap();
            Self {
                catalog,
                histories,
                vectors,
            }
        }

        fn env(&self) -> RefineEnv<'_> {
            RefineEnv {
                catalog: &self.catalog,
                histories: &self.histories,
                item_vectors: &self.vectors,
                context_len: 10,
            }
        }
    }

    fn cands(item: u32, users: &[u32]) -> CandidateSet {
        CandidateSet {
            item: ItemId(item),
            users: users.iter().map(|&u| UserId(u)).collect(),
            scores: vec![0.0; users.len()],
        }
    }

    #[test]
    fn always_yes_and_no() {
        let fx = Fixture::new(6, 3);
        let c = cands(0, &[3, 1, 4]);
        // both constant oracles share a cache key, so each gets its own refiner
        let r = Refiner::new(2, DecisionCache::in_memory()).unwrap();
        assert_eq!(
            r.refine(&fx.env(), &ConstantOracle(true), &c).unwrap().kept,
            c.users
        );
        let r = Refiner::new(2, DecisionCache::in_memory()).unwrap();
        assert!(r
            .refine(&fx.env(), &ConstantOracle(false), &c)
            .unwrap()
            .kept
            .is_empty());
    }

    #[test]
    fn planted_two_clusters() {
        // users 0..4 and items 0..2 form one cluster, the rest the other
        let fx = Fixture::new(8, 4);
        let truth: Vec<Pair> = (0..8u32)
            .flat_map(|u| {
                (0..4u32)
                    .filter(move |&i| (u < 4) == (i < 2))
                    .map(move |i| (UserId(u), ItemId(i)))
            })
            .collect();
        let r = Refiner::new(3, DecisionCache::in_memory()).unwrap();
        let out = r
            .refine(
                &fx.env(),
                &PlantedOracle::new(truth),
                &cands(3, &[0, 5, 1, 7, 2, 4]),
            )
            .unwrap();
        assert_eq!(out.kept, vec![UserId(5), UserId(7), UserId(4)]);
        assert_eq!(out.decisions.len(), 6);
    }

    #[test]
    fn partial_and_total_failure() {
        let fx = Fixture::new(6, 3);
        let r = Refiner::new(2, DecisionCache::in_memory()).unwrap();
        let out = r
            .refine(&fx.env(), &Flaky, &cands(1, &[0, 1, 2, 3]))
            .unwrap();
        assert_eq!((out.kept, out.failures), (vec![UserId(0), UserId(2)], 2));
        assert!(matches!(
            r.refine(&fx.env(), &Flaky, &cands(1, &[1, 3])),
            Err(Error::Transport(_))
        ));
    }

    #[test]
    fn cache_avoids_repeat_calls_and_persists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("decisions.jsonl");
        let fx = Fixture::new(6, 3);
        let o = Counting {
            inner: ConstantOracle(true),
            calls: AtomicUsize::new(0),
        };
        let c = cands(2, &[0, 1, 2]);
        {
            let r = Refiner::new(2, DecisionCache::open(&path).unwrap()).unwrap();
            r.refine(&fx.env(), &o, &c).unwrap();
            r.refine(&fx.env(), &o, &c).unwrap();
        }
        assert_eq!(o.calls.load(Ordering::SeqCst), 3);
        let r = Refiner::new(2, DecisionCache::open(&path).unwrap()).unwrap();
        assert_eq!(r.cache().len(), 3);
        r.refine(&fx.env(), &o, &c).unwrap();
        assert_eq!(o.calls.load(Ordering::SeqCst), 3);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for f in ["user", "item", "z", "raw", "oracle"] {
            assert!(first.get(f).is_some(), "{f}");
        }
    }

    #[test]
    fn random_candidates_are_distinct() {
        let c = random_candidates(ItemId(3), 50, 20, 1);
        let mut u = c.users.clone();
        u.sort();
        u.dedup();
        assert_eq!(u.len(), 20);
        assert_eq!(random_candidates(ItemId(3), 5, 20, 1).len(), 5);
    }

    proptest! {
        #[test]
        fn refine_is_an_ordered_subset(users in proptest::collection::hash_set(0u32..40, 1..20), accept in proptest::collection::hash_set(0u32..40, 0..40)) {
            let fx = Fixture::new(40, 3);
            let users: Vec<u32> = users.into_iter().collect();
            let c = cands(1, &users);
            let truth: Vec<Pair> = accept.iter().map(|&u| (UserId(u), ItemId(1))).collect();
            let r = Refiner::new(2, DecisionCache::in_memory()).unwrap();
            let out = r.refine(&fx.env(), &PlantedOracle::new(truth), &c).unwrap();
            let want: Vec<UserId> = c.users.iter().copied().filter(|u| accept.contains(&u.0)).collect();
            prop_assert_eq!(out.kept, want);
        }
    }
}
