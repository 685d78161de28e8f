//! End-to-end orchestration: backbone, content, filters, simulation,
//! warmup and evaluation, plus ablation variants and parameter sweeps.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{init_embeddings, train_backbone, BackboneModel, EpochStats};
use crate::config::{Config, DatasetKind};
use crate::content::{warm_cache, ContentProvider, WarmOptions};
use crate::corpus::{
    load_citeulike_with, load_movielens_with, ColdWarmSplit, Dataset, ItemCatalog,
};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{adoption_rate, evaluate_all, AdoptionStats, EvalReport, Task};
use crate::filter::{
    sample_label_pairs, train_behavior_filter, train_coupled_filter, FilterConfig, FilterHandle,
    FilterInputs, FilterTrainOutcome, TwoTowerFilter, UserIndex, Variant,
};
use crate::ids::{ItemId, Pair};
use crate::math::derive_seed;
use crate::refiner::{
    random_candidates, simulate_for_item, Oracle, RefineEnv, Refiner, SimulateOptions, Simulation,
};
use crate::synthetic::generate_planted;
use crate::warmup::{warm_all_cold, WarmupReport};

/// Stream tags for [`derive_seed`], one per stochastic stage.
pub mod seeds {
    pub const BACKBONE: u64 = 101;
    pub const FILTER_B: u64 = 102;
    pub const FILTER_L: u64 = 103;
    pub const LABELS: u64 = 104;
    pub const WARMUP: u64 = 105;
    pub const RANDOM_BASELINE: u64 = 106;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationVariant {
    #[serde(rename = "full")]
    Full,
    /// Behavior filter only, no refinement.
    #[serde(rename = "no-LSF-R")]
    NoLsfR,
    /// Coupled filter only, no refinement.
    #[serde(rename = "no-BF-R")]
    NoBfR,
    #[serde(rename = "no-LSF")]
    NoLsf,
    #[serde(rename = "no-BF")]
    NoBf,
    #[serde(rename = "no-R")]
    NoR,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [
        Self::Full,
        Self::NoLsfR,
        Self::NoBfR,
        Self::NoLsf,
        Self::NoBf,
        Self::NoR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoLsfR => "no-LSF-R",
            Self::NoBfR => "no-BF-R",
            Self::NoLsf => "no-LSF",
            Self::NoBf => "no-BF",
            Self::NoR => "no-R",
        }
    }

    pub fn uses_behavior_filter(self) -> bool {
        !matches!(self, Self::NoBfR | Self::NoBf)
    }

    pub fn uses_coupled_filter(self) -> bool {
        !matches!(self, Self::NoLsfR | Self::NoLsf)
    }

    pub fn refines(self) -> bool {
        matches!(self, Self::Full | Self::NoLsf | Self::NoBf)
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?}")))
    }
}

/// Loads or generates the configured dataset. Synthetic data also returns
/// its ground-truth pairs.
pub fn load_dataset(cfg: &Config) -> Result<(Dataset, Option<Vec<Pair>>)> {
    let path = || {
        cfg.data
            .path
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("data.path is required for this dataset".into()))
    };
    Ok(match cfg.data.dataset {
        DatasetKind::Citeulike => (load_citeulike_with(path()?, &cfg.data.citeulike)?, None),
        DatasetKind::Movielens => (load_movielens_with(path()?, &cfg.data.movielens)?, None),
        DatasetKind::Synthetic => {
            let d = generate_planted(&cfg.data.synthetic, cfg.seed)?;
            (d.dataset, Some(d.truth))
        }
    })
}

/// Raw content vectors for every item as one table, through the cache.
pub fn content_table(
    provider: &dyn ContentProvider,
    catalog: &ItemCatalog,
    cache_path: Option<&Path>,
    opts: &WarmOptions,
) -> Result<EmbeddingTable> {
    let (cache, stats) = warm_cache(provider, catalog, cache_path, opts)?;
    log::info!(
        "content vectors: {} cached, {} computed",
        stats.hits,
        stats.computed
    );
    cache.to_table(catalog.len())
}

/// Item vectors that rank context items: the behavior filter's item
/// mapping when available, otherwise the raw content vectors.
pub fn context_vectors(
    filter_b: Option<&TwoTowerFilter>,
    inputs: &FilterInputs,
) -> Result<EmbeddingTable> {
    match filter_b {
        Some(f) => f.map_all_items(inputs),
        None => Ok(inputs.content().clone()),
    }
}

pub fn fit_behavior_filter(
    inputs: &FilterInputs,
    split: &ColdWarmSplit,
    cfg: &FilterConfig,
    out_dim: usize,
    seed: u64,
) -> Result<(TwoTowerFilter, FilterTrainOutcome)> {
    let s = derive_seed(seed, seeds::FILTER_B);
    let mut f = TwoTowerFilter::new(
        Variant::B,
        inputs.user_dim() - inputs.content_dim(),
        inputs.content_dim(),
        cfg.hidden,
        out_dim,
        s,
    )?;
    let outcome = train_behavior_filter(&mut f, inputs, split, cfg, s)?;
    Ok((f, outcome))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledOutcome {
    pub train: FilterTrainOutcome,
    pub labels: usize,
    pub positive_labels: usize,
    pub label_failures: usize,
}

/// Labels a 1:1 pool of observed and unobserved pairs with the oracle and
/// trains the coupled filter on them.
#[allow(clippy::too_many_arguments)]
pub fn fit_coupled_filter(
    inputs: &FilterInputs,
    split: &ColdWarmSplit,
    cfg: &FilterConfig,
    out_dim: usize,
    refiner: &Refiner,
    env: &RefineEnv<'_>,
    oracle: &dyn Oracle,
    seed: u64,
) -> Result<(TwoTowerFilter, CoupledOutcome)> {
    let pairs = sample_label_pairs(split, cfg.label_pairs, derive_seed(seed, seeds::LABELS));
    let (labels, label_failures) = refiner.label(env, oracle, &pairs)?;
    let s = derive_seed(seed, seeds::FILTER_L);
    let mut f = TwoTowerFilter::new(
        Variant::L,
        inputs.user_dim() - inputs.content_dim(),
        inputs.content_dim(),
        cfg.hidden,
        out_dim,
        s,
    )?;
    let train = train_coupled_filter(&mut f, inputs, &labels, split, cfg, s)?;
    let positive_labels = labels.iter().filter(|l| l.z == 1).count();
    Ok((
        f,
        CoupledOutcome {
            train,
            labels: labels.len(),
            positive_labels,
            label_failures,
        },
    ))
}

/// Trained components shared by every variant evaluation.
pub struct Prepared {
    pub backbone: BackboneModel,
    pub backbone_history: Vec<EpochStats>,
    pub content: EmbeddingTable,
    pub inputs: FilterInputs,
    pub histories: Vec<Vec<ItemId>>,
    pub filter_b: Option<TwoTowerFilter>,
    pub filter_b_outcome: Option<FilterTrainOutcome>,
    pub filter_l: Option<TwoTowerFilter>,
    pub filter_l_outcome: Option<CoupledOutcome>,
    pub context_vectors: EmbeddingTable,
}

impl Prepared {
    pub fn env<'a>(&'a self, catalog: &'a ItemCatalog, cfg: &Config) -> RefineEnv<'a> {
        RefineEnv {
            catalog,
            histories: &self.histories,
            item_vectors: &self.context_vectors,
            context_len: cfg.refiner.context_len,
        }
    }
}

/// Trains the backbone, computes content vectors and trains the filters
/// `variant` needs.
#[allow(clippy::too_many_arguments)]
pub fn prepare(
    dataset: &Dataset,
    split: &ColdWarmSplit,
    cfg: &Config,
    variant: AblationVariant,
    provider: &dyn ContentProvider,
    content_cache: Option<&Path>,
    oracle: &dyn Oracle,
    refiner: &Refiner,
) -> Result<Prepared> {
    let bb = train_backbone(split, &cfg.backbone, derive_seed(cfg.seed, seeds::BACKBONE))?;
    let content = content_table(
        provider,
        &dataset.catalog,
        content_cache,
        &cfg.content.warm_options(),
    )?;
    let histories = split.train_histories();
    let inputs = FilterInputs::new(&bb.model, &content, &histories)?;
    let out_dim = bb.model.dim();
    let (filter_b, filter_b_outcome) = if variant.uses_behavior_filter() {
        let (f, o) = fit_behavior_filter(&inputs, split, &cfg.filter, out_dim, cfg.seed)?;
        (Some(f), Some(o))
    } else {
        (None, None)
    };
    let context_vectors = context_vectors(filter_b.as_ref(), &inputs)?;
    let (filter_l, filter_l_outcome) = if variant.uses_coupled_filter() {
        let env = RefineEnv {
            catalog: &dataset.catalog,
            histories: &histories,
            item_vectors: &context_vectors,
            context_len: cfg.refiner.context_len,
        };
        let (f, o) = fit_coupled_filter(
            &inputs,
            split,
            &cfg.filter,
            out_dim,
            refiner,
            &env,
            oracle,
            cfg.seed,
        )?;
        (Some(f), Some(o))
    } else {
        (None, None)
    };
    Ok(Prepared {
        backbone: bb.model,
        backbone_history: bb.history,
        content,
        inputs,
        histories,
        filter_b,
        filter_b_outcome,
        filter_l,
        filter_l_outcome,
        context_vectors,
    })
}

/// Runs the funnel for every cold item.
pub fn simulate_cold_items(
    prepared: &Prepared,
    catalog: &ItemCatalog,
    split: &ColdWarmSplit,
    cfg: &Config,
    variant: AblationVariant,
    oracle: &dyn Oracle,
    refiner: &Refiner,
) -> Result<Vec<Simulation>> {
    let need = |present: bool, component: &'static str| {
        if present {
            Ok(())
        } else {
            Err(Error::VariantMismatch {
                variant: variant.name().into(),
                component,
            })
        }
    };
    let index_b = match (&prepared.filter_b, variant.uses_behavior_filter()) {
        (Some(f), true) => Some(UserIndex::build(f, &prepared.inputs)?),
        (None, true) => return need(false, "the behavior filter").map(|_| Vec::new()),
        _ => None,
    };
    let index_l = match (&prepared.filter_l, variant.uses_coupled_filter()) {
        (Some(f), true) => Some(UserIndex::build(f, &prepared.inputs)?),
        (None, true) => return need(false, "the coupled filter").map(|_| Vec::new()),
        _ => None,
    };
    let b = index_b.as_ref().map(|index| FilterHandle {
        filter: prepared.filter_b.as_ref().unwrap(),
        index,
    });
    let l = index_l.as_ref().map(|index| FilterHandle {
        filter: prepared.filter_l.as_ref().unwrap(),
        index,
    });
    let env = prepared.env(catalog, cfg);
    let opts = SimulateOptions {
        k: cfg.filter.top_k,
        refine: variant.refines(),
        fallback: cfg.refiner.fallback,
    };
    split
        .cold_items
        .iter()
        .map(|&item| {
            simulate_for_item(
                item,
                prepared.content.row(item.index()),
                l,
                b,
                refiner,
                &env,
                oracle,
                &opts,
            )
        })
        .collect()
}

pub struct PipelineRun {
    pub variant: AblationVariant,
    pub simulations: Vec<Simulation>,
    /// `None` when the variant skips refinement.
    pub adoption: Option<AdoptionStats>,
    pub warmed: BackboneModel,
    pub warmup: WarmupReport,
    pub report: EvalReport,
}

/// Simulation, warmup and evaluation on top of prepared components.
pub fn finish(
    prepared: &Prepared,
    dataset: &Dataset,
    split: &ColdWarmSplit,
    cfg: &Config,
    variant: AblationVariant,
    oracle: &dyn Oracle,
    refiner: &Refiner,
) -> Result<PipelineRun> {
    let simulations = simulate_cold_items(
        prepared,
        &dataset.catalog,
        split,
        cfg,
        variant,
        oracle,
        refiner,
    )?;
    let adoption = if variant.refines() {
        let decisions: Vec<_> = simulations.iter().flat_map(|s| &s.decisions).collect();
        if decisions.is_empty() {
            None
        } else {
            Some(adoption_rate(decisions)?)
        }
    } else {
        None
    };
    let (warmed, warmup) = warm_up(prepared, split, &simulations, cfg)?;
    let report = evaluate_all(&warmed, split, &cfg.eval_options(), &cfg.fingerprint())?;
    Ok(PipelineRun {
        variant,
        simulations,
        adoption,
        warmed,
        warmup,
        report,
    })
}

/// Either optimizes the cold rows against the simulations, or (with
/// `retrain_with_simulated`) retrains the backbone on warm-train plus the
/// simulated pairs.
pub fn warm_up(
    prepared: &Prepared,
    split: &ColdWarmSplit,
    sims: &[Simulation],
    cfg: &Config,
) -> Result<(BackboneModel, WarmupReport)> {
    if !cfg.warmup.retrain_with_simulated {
        return warm_all_cold(
            &prepared.backbone,
            split,
            sims,
            prepared.filter_b.as_ref(),
            Some(&prepared.content),
            &cfg.warmup,
            derive_seed(cfg.seed, seeds::WARMUP),
        );
    }
    let mut aug = split.clone();
    let seen: HashSet<Pair> = aug.warm_train.iter().copied().collect();
    aug.warm_train.extend(
        sims.iter()
            .flat_map(|s| s.kept.iter().map(move |&u| (u, s.item)))
            .filter(|p| !seen.contains(p)),
    );
    let bb = train_backbone(&aug, &cfg.backbone, derive_seed(cfg.seed, seeds::BACKBONE))?;
    let report = WarmupReport {
        items: sims
            .iter()
            .map(|s| crate::warmup::WarmupItemReport {
                item: s.item,
                simulated: s.kept.len(),
                final_loss: None,
                fallback: s.fallback,
                init: cfg.warmup.init,
            })
            .collect(),
        skipped: Vec::new(),
    };
    Ok((bb.model, report))
}

/// Prepare and finish in one call.
#[allow(clippy::too_many_arguments)]
pub fn run_pipeline(
    dataset: &Dataset,
    split: &ColdWarmSplit,
    cfg: &Config,
    variant: AblationVariant,
    provider: &dyn ContentProvider,
    content_cache: Option<&Path>,
    oracle: &dyn Oracle,
    refiner: &Refiner,
) -> Result<(Prepared, PipelineRun)> {
    let prepared = prepare(
        dataset,
        split,
        cfg,
        variant,
        provider,
        content_cache,
        oracle,
        refiner,
    )?;
    let run = finish(&prepared, dataset, split, cfg, variant, oracle, refiner)?;
    Ok((prepared, run))
}

/// Adoption rate of `k` uniformly random candidates per cold item.
pub fn random_adoption(
    split: &ColdWarmSplit,
    env: &RefineEnv<'_>,
    oracle: &dyn Oracle,
    refiner: &Refiner,
    k: usize,
    seed: u64,
) -> Result<AdoptionStats> {
    let s = derive_seed(seed, seeds::RANDOM_BASELINE);
    let mut decisions = Vec::new();
    for &item in &split.cold_items {
        let c = random_candidates(item, split.n_users, k, s);
        decisions.extend(refiner.refine(env, oracle, &c)?.decisions);
    }
    adoption_rate(&decisions)
}

/// The backbone with every cold row redrawn from the initialization
/// distribution: what evaluation sees with no simulation at all.
pub fn random_embedding_baseline(
    backbone: &BackboneModel,
    split: &ColdWarmSplit,
    seed: u64,
) -> Result<BackboneModel> {
    let fresh = init_embeddings(
        backbone.n_items(),
        backbone.dim(),
        derive_seed(seed, seeds::RANDOM_BASELINE),
    );
    let mut m = backbone.clone();
    for &c in &split.cold_items {
        m.set_item_row(c, fresh.row(c.index()))?;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    /// Candidates kept per cold item.
    K,
    WarmupLr,
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(Self::K),
            "warmup-lr" => Ok(Self::WarmupLr),
            _ => Err(Error::InvalidArgument(format!(
                "unknown sweep parameter {s:?} (expected K or warmup-lr)"
            ))),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::K => "K",
            Self::WarmupLr => "warmup-lr",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub top_k: usize,
    pub warmup_lr: f64,
    pub report: EvalReport,
}

/// The configuration for one sweep value.
pub fn sweep_config(cfg: &Config, param: SweepParam, value: f64) -> Result<Config> {
    let mut c = cfg.clone();
    match param {
        SweepParam::K => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "K must be a positive integer, got {value}"
                )));
            }
            c.filter.top_k = value as usize;
        }
        SweepParam::WarmupLr => {
            if value < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "warmup lr must be non-negative, got {value}"
                )));
            }
            c.warmup.lr = value;
        }
    }
    Ok(c)
}

/// One full evaluation per value, reusing the prepared components (neither
/// parameter affects them).
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    prepared: &Prepared,
    dataset: &Dataset,
    split: &ColdWarmSplit,
    cfg: &Config,
    variant: AblationVariant,
    oracle: &dyn Oracle,
    refiner: &Refiner,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one value".into(),
        ));
    }
    values
        .iter()
        .map(|&value| {
            let c = sweep_config(cfg, param, value)?;
            let run = finish(prepared, dataset, split, &c, variant, oracle, refiner)?;
            Ok(SweepRow {
                param,
                value,
                top_k: c.filter.top_k,
                warmup_lr: c.warmup.lr,
                report: run.report,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![
        "param".to_string(),
        "value".into(),
        "top_k".into(),
        "warmup_lr".into(),
    ];
    for t in Task::ALL {
        header.push(format!("{t}_recall"));
        header.push(format!("{t}_ndcg"));
    }
    header.push("fingerprint".into());
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.param.to_string(),
            r.value.to_string(),
            r.top_k.to_string(),
            r.warmup_lr.to_string(),
        ];
        for t in Task::ALL {
            match r.report.task(t) {
                Some(m) => {
                    rec.push(format!("{:.6}", m.recall));
                    rec.push(format!("{:.6}", m.ndcg));
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        rec.push(r.report.config_fingerprint.clone());
        out.write_record(&rec)?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in AblationVariant::ALL {
            assert_eq!(v.name().parse::<AblationVariant>().unwrap(), v);
            assert_eq!(
                serde_json::to_string(&v).unwrap(),
                format!("\"{}\"", v.name())
            );
        }
        assert!("no-X".parse::<AblationVariant>().is_err());
    }

    #[test]
    fn variant_components() {
        use AblationVariant::*;
        assert!(Full.uses_behavior_filter() && Full.uses_coupled_filter() && Full.refines());
        assert!(!NoLsf.uses_coupled_filter() && NoLsf.refines());
        assert!(!NoBf.uses_behavior_filter() && NoBf.refines());
        assert!(!NoR.refines() && NoR.uses_coupled_filter() && NoR.uses_behavior_filter());
        assert!(!NoLsfR.refines() && !NoLsfR.uses_coupled_filter());
        assert!(!NoBfR.refines() && !NoBfR.uses_behavior_filter());
    }

    #[test]
    fn sweep_config_validates() {
        let c = Config::default();
        assert_eq!(
            sweep_config(&c, SweepParam::K, 50.0).unwrap().filter.top_k,
            50
        );
        assert!(sweep_config(&c, SweepParam::K, 2.5).is_err());
        assert_eq!(
            sweep_config(&c, SweepParam::WarmupLr, 0.01)
                .unwrap()
                .warmup
                .lr,
            0.01
        );
    }
}
