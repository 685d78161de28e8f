//! `coldsim`: run the cold-start simulation pipeline stage by stage.
//!
//! Every command reads its inputs from and writes its artifacts to the
//! `--out` directory, so stages can be rerun independently.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use coldsim_core::backbone::{train_backbone, BackboneModel};
use coldsim_core::config::{Config, DatasetKind};
use coldsim_core::content::warm_cache;
use coldsim_core::corpus::{make_cold_split, ColdWarmSplit, Dataset};
use coldsim_core::embedding::EmbeddingTable;
use coldsim_core::error::{Error, Result};
use coldsim_core::eval::{evaluate, evaluate_all, EvalReport, Task};
use coldsim_core::filter::{FilterInputs, TwoTowerFilter, Variant};
use coldsim_core::ids::Pair;
use coldsim_core::math::derive_seed;
use coldsim_core::pipeline::{
    self, fit_behavior_filter, fit_coupled_filter, random_adoption, seeds, simulate_cold_items,
    sweep, warm_up, write_sweep_csv, AblationVariant, Prepared, SweepParam,
};
use coldsim_core::refiner::{
    prepare_finetune_data, write_finetune, DecisionCache, FinetuneMode, Oracle, RefineEnv, Refiner,
    Simulation,
};
use coldsim_core::synthetic::generate_planted;

#[derive(Parser, Debug)]
#[command(
    name = "coldsim",
    version,
    about = "Cold-start item warmup by simulated interactions"
)]
struct Cli {
    /// JSON configuration; defaults apply to every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load (or generate) the dataset and persist it with its id mapping.
    Ingest {
        #[arg(long, value_enum)]
        dataset: Option<DatasetArg>,
        /// Dataset directory; overrides data.path.
        #[arg(long)]
        path: Option<PathBuf>,
    },
    /// Choose cold items and split interactions.
    Split,
    /// Train the matrix-factorization backbone on warm-train.
    TrainBackbone,
    /// Compute (or resume) the raw content vector cache.
    CacheContent,
    /// Train filter B (behavior) or L (coupled to the oracle).
    TrainFilter {
        #[arg(long)]
        variant: Variant,
    },
    /// Write oracle fine-tuning records as JSONL.
    ExportFinetune {
        #[arg(long, value_enum, default_value = "offline")]
        mode: ModeArg,
        /// Cap on sampled positives.
        #[arg(long)]
        max_positives: Option<usize>,
        /// JSON list of explicit negative [user, item] pairs (online mode).
        #[arg(long)]
        negatives: Option<PathBuf>,
    },
    /// Filter and refine candidate users for every cold item.
    Simulate {
        #[arg(long)]
        variant: Option<AblationVariant>,
        /// Also measure the adoption rate of uniformly random candidates.
        #[arg(long)]
        random_baseline: bool,
    },
    /// Fit cold-item embeddings to the simulated users.
    Warmup,
    /// Evaluate a model; all tasks unless --task is given.
    Evaluate {
        #[arg(long)]
        task: Option<Task>,
        /// Model to evaluate; defaults to the warmed model.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the whole pipeline for one ablation variant.
    Ablate {
        #[arg(long)]
        variant: AblationVariant,
    },
    /// One pipeline evaluation per value of a parameter.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        variant: Option<AblationVariant>,
    },
    /// Print the configuration with every default filled in.
    DefaultConfig {
        #[arg(long, value_enum, default_value = "default")]
        preset: Preset,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DatasetArg {
    Citeulike,
    Movielens,
    Synthetic,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Offline,
    Online,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Default,
    /// Desk-scale settings for the planted synthetic dataset.
    Planted,
}

/// Artifact file names inside `--out`.
mod files {
    pub const DATASET: &str = "dataset.json";
    pub const TRUTH: &str = "truth.json";
    pub const SPLIT: &str = "split.json";
    pub const BACKBONE: &str = "backbone.cemb";
    pub const BACKBONE_HISTORY: &str = "backbone_history.json";
    pub const CONTENT: &str = "content.cemb";
    pub const DECISIONS: &str = "decisions.jsonl";
    pub const FINETUNE: &str = "finetune.jsonl";
    pub const SIMULATIONS: &str = "simulations.json";
    pub const ADOPTION: &str = "adoption.json";
    pub const WARMED: &str = "warmed.cemb";
    pub const WARMUP_REPORT: &str = "warmup_report.json";

    pub fn filter(v: coldsim_core::filter::Variant) -> String {
        format!("filter_{}.cemb", v.to_string().to_lowercase())
    }
}

struct Ctx {
    cfg: Config,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, name: &str, producer: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::InvalidArgument(format!(
                "{} not found; run `coldsim {producer}` first",
                p.display()
            )))
        }
    }

    fn dataset(&self) -> Result<Dataset> {
        Dataset::load(self.require(files::DATASET, "ingest")?)
    }

    fn split(&self) -> Result<ColdWarmSplit> {
        ColdWarmSplit::load(self.require(files::SPLIT, "split")?)
    }

    fn backbone(&self) -> Result<BackboneModel> {
        BackboneModel::load(self.require(files::BACKBONE, "train-backbone")?)
    }

    fn content(&self, dataset: &Dataset) -> Result<EmbeddingTable> {
        let path = self.require(files::CONTENT, "cache-content")?;
        let cache = coldsim_core::content::ContentCache::load(path)?;
        cache.to_table(dataset.catalog.len())
    }

    fn filter(&self, v: Variant) -> Result<Option<TwoTowerFilter>> {
        let p = self.path(&files::filter(v));
        if p.exists() {
            TwoTowerFilter::load(p).map(Some)
        } else {
            Ok(None)
        }
    }

    fn truth(&self) -> Result<Option<Vec<Pair>>> {
        let p = self.path(files::TRUTH);
        if self.cfg.refiner.truth_path.is_none() && p.exists() {
            Ok(Some(read_json(&p)?))
        } else {
            Ok(None)
        }
    }

    fn oracle(&self, content: &EmbeddingTable) -> Result<Box<dyn Oracle>> {
        self.cfg.refiner.build_oracle(content, self.truth()?)
    }

    fn refiner(&self) -> Result<Refiner> {
        Refiner::new(
            self.cfg.refiner.max_inflight,
            DecisionCache::open(self.path(files::DECISIONS))?,
        )
    }

    /// Persisted dataset and split when present, otherwise built from the
    /// configuration.
    fn dataset_and_split(&self) -> Result<(Dataset, ColdWarmSplit)> {
        let dataset = if self.path(files::DATASET).exists() {
            self.dataset()?
        } else {
            pipeline::load_dataset(&self.cfg)?.0
        };
        let split = if self.path(files::SPLIT).exists() {
            self.split()?
        } else {
            make_cold_split(&dataset.log, self.cfg.data.cold_frac, self.cfg.seed)?
        };
        Ok((dataset, split))
    }

    /// Trained components loaded from disk, in the shape the pipeline uses.
    fn prepared(&self, dataset: &Dataset, split: &ColdWarmSplit) -> Result<Prepared> {
        let backbone = self.backbone()?;
        let content = self.content(dataset)?;
        let histories = split.train_histories();
        let inputs = FilterInputs::new(&backbone, &content, &histories)?;
        let filter_b = self.filter(Variant::B)?;
        let filter_l = self.filter(Variant::L)?;
        let context_vectors = pipeline::context_vectors(filter_b.as_ref(), &inputs)?;
        Ok(Prepared {
            backbone,
            backbone_history: Vec::new(),
            content,
            inputs,
            histories,
            filter_b,
            filter_b_outcome: None,
            filter_l,
            filter_l_outcome: None,
            context_vectors,
        })
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn write_report(ctx: &Ctx, stem: &str, report: &EvalReport) -> Result<()> {
    write_json(&ctx.path(&format!("{stem}.json")), report)?;
    let table = report.to_table();
    std::fs::write(ctx.path(&format!("{stem}.txt")), &table)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    print!("{table}");
    Ok(())
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) if !p.exists() => {
            return Err(Error::InvalidArgument(format!(
                "config file {} not found",
                p.display()
            )))
        }
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Command::DefaultConfig { preset } = cli.command {
        let mut cfg = match preset {
            Preset::Default => Config::default(),
            Preset::Planted => Config::planted(),
        };
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let mut cfg = load_config(&cli)?;
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", cli.out.display())))?;

    if let Command::Ingest { dataset, path } = &cli.command {
        if let Some(d) = dataset {
            cfg.data.dataset = match d {
                DatasetArg::Citeulike => DatasetKind::Citeulike,
                DatasetArg::Movielens => DatasetKind::Movielens,
                DatasetArg::Synthetic => DatasetKind::Synthetic,
            };
        }
        if path.is_some() {
            cfg.data.path = path.clone();
        }
    }
    let ctx = Ctx { cfg, out: cli.out };
    let cfg = &ctx.cfg;

    match cli.command {
        Command::DefaultConfig { .. } => unreachable!(),
        Command::Ingest { .. } => {
            let dataset = if cfg.data.dataset == DatasetKind::Synthetic {
                let planted = generate_planted(&cfg.data.synthetic, cfg.seed)?;
                write_json(&ctx.path(files::TRUTH), &planted.truth)?;
                planted.dataset
            } else {
                pipeline::load_dataset(cfg)?.0
            };
            dataset.save(ctx.path(files::DATASET))?;
            println!(
                "users {} items {} interactions {}",
                dataset.log.n_users(),
                dataset.log.n_items(),
                dataset.log.len()
            );
        }
        Command::Split => {
            let dataset = ctx.dataset()?;
            let split = make_cold_split(&dataset.log, cfg.data.cold_frac, cfg.seed)?;
            split.save(ctx.path(files::SPLIT))?;
            println!(
                "warm items {} cold items {} warm train/val/test {}/{}/{} cold val/test {}/{}",
                split.warm_items.len(),
                split.cold_items.len(),
                split.warm_train.len(),
                split.warm_val.len(),
                split.warm_test.len(),
                split.cold_val.len(),
                split.cold_test.len()
            );
        }
        Command::TrainBackbone => {
            let split = ctx.split()?;
            let outcome = train_backbone(
                &split,
                &cfg.backbone,
                derive_seed(cfg.seed, seeds::BACKBONE),
            )?;
            outcome.model.save(ctx.path(files::BACKBONE))?;
            write_json(&ctx.path(files::BACKBONE_HISTORY), &outcome.history)?;
            println!(
                "epochs {} best epoch {} best val NDCG {:?}",
                outcome.history.len(),
                outcome.best_epoch,
                outcome.best_val_ndcg
            );
        }
        Command::CacheContent => {
            let dataset = ctx.dataset()?;
            let provider = cfg.content.build_provider()?;
            let (cache, stats) = warm_cache(
                provider.as_ref(),
                &dataset.catalog,
                Some(ctx.path(files::CONTENT).as_path()),
                &cfg.content.warm_options(),
            )?;
            println!(
                "items {} dim {:?} cached {} computed {}",
                cache.len(),
                cache.dim(),
                stats.hits,
                stats.computed
            );
        }
        Command::TrainFilter { variant } => {
            let dataset = ctx.dataset()?;
            let split = ctx.split()?;
            let backbone = ctx.backbone()?;
            let content = ctx.content(&dataset)?;
            let histories = split.train_histories();
            let inputs = FilterInputs::new(&backbone, &content, &histories)?;
            let (filter, history) = match variant {
                Variant::B => {
                    let (f, o) = fit_behavior_filter(
                        &inputs,
                        &split,
                        &cfg.filter,
                        backbone.dim(),
                        cfg.seed,
                    )?;
                    (f, serde_json::to_value(&o)?)
                }
                Variant::L => {
                    let filter_b = ctx.filter(Variant::B)?;
                    let vectors = pipeline::context_vectors(filter_b.as_ref(), &inputs)?;
                    let env = RefineEnv {
                        catalog: &dataset.catalog,
                        histories: &histories,
                        item_vectors: &vectors,
                        context_len: cfg.refiner.context_len,
                    };
                    let oracle = ctx.oracle(&content)?;
                    let refiner = ctx.refiner()?;
                    let (f, o) = fit_coupled_filter(
                        &inputs,
                        &split,
                        &cfg.filter,
                        backbone.dim(),
                        &refiner,
                        &env,
                        oracle.as_ref(),
                        cfg.seed,
                    )?;
                    (f, serde_json::to_value(&o)?)
                }
            };
            let path = ctx.path(&files::filter(variant));
            filter.save(&path, Some(&cfg.filter))?;
            let stem = path.with_extension("");
            write_json(
                &PathBuf::from(format!("{}_history.json", stem.display())),
                &history,
            )?;
            println!("filter {variant} saved to {}", path.display());
        }
        Command::ExportFinetune {
            mode,
            max_positives,
            negatives,
        } => {
            let dataset = ctx.dataset()?;
            let split = ctx.split()?;
            let histories = split.train_histories();
            let vectors = match (ctx.path(files::BACKBONE).exists(), ctx.filter(Variant::B)?) {
                (true, Some(fb)) => {
                    let backbone = ctx.backbone()?;
                    let content = ctx.content(&dataset)?;
                    fb.map_all_items(&FilterInputs::new(&backbone, &content, &histories)?)?
                }
                _ => ctx.content(&dataset)?,
            };
            let env = RefineEnv {
                catalog: &dataset.catalog,
                histories: &histories,
                item_vectors: &vectors,
                context_len: cfg.refiner.context_len,
            };
            let mode = match mode {
                ModeArg::Offline => FinetuneMode::Offline,
                ModeArg::Online => FinetuneMode::Online,
            };
            let explicit: Vec<Pair> = match negatives {
                Some(p) => read_json(&p)?,
                None => Vec::new(),
            };
            let records =
                prepare_finetune_data(&split, &env, mode, &explicit, max_positives, cfg.seed)?;
            write_finetune(ctx.path(files::FINETUNE), &records)?;
            let yes = records.iter().filter(|r| r.completion == "Yes").count();
            println!(
                "records {} yes {} no {}",
                records.len(),
                yes,
                records.len() - yes
            );
        }
        Command::Simulate {
            variant,
            random_baseline,
        } => {
            let variant = variant.unwrap_or(cfg.eval.variant);
            let dataset = ctx.dataset()?;
            let split = ctx.split()?;
            let prepared = ctx.prepared(&dataset, &split)?;
            let oracle = ctx.oracle(&prepared.content)?;
            let refiner = ctx.refiner()?;
            let sims = simulate_cold_items(
                &prepared,
                &dataset.catalog,
                &split,
                cfg,
                variant,
                oracle.as_ref(),
                &refiner,
            )?;
            write_json(&ctx.path(files::SIMULATIONS), &sims)?;
            let decisions: Vec<_> = sims.iter().flat_map(|s| &s.decisions).collect();
            let mut adoption = serde_json::Map::new();
            if !decisions.is_empty() {
                let a = coldsim_core::eval::adoption_rate(decisions)?;
                println!("adoption {}/{} = {:.4}", a.accepted, a.filtered, a.rate);
                adoption.insert("funnel".into(), serde_json::to_value(a)?);
            }
            if random_baseline {
                let env = prepared.env(&dataset.catalog, cfg);
                let a = random_adoption(
                    &split,
                    &env,
                    oracle.as_ref(),
                    &refiner,
                    cfg.filter.top_k,
                    cfg.seed,
                )?;
                println!(
                    "random adoption {}/{} = {:.4}",
                    a.accepted, a.filtered, a.rate
                );
                adoption.insert("random".into(), serde_json::to_value(a)?);
            }
            if !adoption.is_empty() {
                write_json(&ctx.path(files::ADOPTION), &adoption)?;
            }
            let fallbacks = sims.iter().filter(|s| s.fallback).count();
            println!("cold items {} fallbacks {fallbacks}", sims.len());
        }
        Command::Warmup => {
            let dataset = ctx.dataset()?;
            let split = ctx.split()?;
            let prepared = ctx.prepared(&dataset, &split)?;
            let sims: Vec<Simulation> = read_json(&ctx.require(files::SIMULATIONS, "simulate")?)?;
            let (warmed, report) = warm_up(&prepared, &split, &sims, cfg)?;
            warmed.save(ctx.path(files::WARMED))?;
            report.save(ctx.path(files::WARMUP_REPORT))?;
            println!(
                "warmed {} cold items, skipped {}",
                report.items.len(),
                report.skipped.len()
            );
        }
        Command::Evaluate { task, model } => {
            let split = ctx.split()?;
            let model = match model {
                Some(p) => BackboneModel::load(p)?,
                None => BackboneModel::load(ctx.require(files::WARMED, "warmup")?)?,
            };
            let report = match task {
                None => evaluate_all(&model, &split, &cfg.eval_options(), &cfg.fingerprint())?,
                Some(t) => {
                    let opts = cfg.eval_options();
                    EvalReport {
                        k: opts.k,
                        user_sample: opts.users,
                        seed: opts.seed,
                        config_fingerprint: cfg.fingerprint(),
                        tasks: vec![evaluate(&model, &split, t, &opts)?],
                    }
                }
            };
            let stem = task.map_or("report".to_string(), |t| format!("report_{t}"));
            write_report(&ctx, &stem, &report)?;
        }
        Command::Ablate { variant } => {
            let (dataset, split) = ctx.dataset_and_split()?;
            let provider = cfg.content.build_provider()?;
            let content_path = ctx.path(files::CONTENT);
            let (content_cache, _) = warm_cache(
                provider.as_ref(),
                &dataset.catalog,
                Some(content_path.as_path()),
                &cfg.content.warm_options(),
            )?;
            let oracle = ctx.oracle(&content_cache.to_table(dataset.catalog.len())?)?;
            let refiner = ctx.refiner()?;
            let (_, run) = pipeline::run_pipeline(
                &dataset,
                &split,
                cfg,
                variant,
                provider.as_ref(),
                Some(content_path.as_path()),
                oracle.as_ref(),
                &refiner,
            )?;
            if let Some(a) = &run.adoption {
                println!("adoption {}/{} = {:.4}", a.accepted, a.filtered, a.rate);
            }
            write_report(&ctx, &format!("ablation_{variant}"), &run.report)?;
        }
        Command::Sweep {
            param,
            values,
            variant,
        } => {
            let variant = variant.unwrap_or(cfg.eval.variant);
            let (dataset, split) = ctx.dataset_and_split()?;
            let provider = cfg.content.build_provider()?;
            let content_path = ctx.path(files::CONTENT);
            let (content_cache, _) = warm_cache(
                provider.as_ref(),
                &dataset.catalog,
                Some(content_path.as_path()),
                &cfg.content.warm_options(),
            )?;
            let oracle = ctx.oracle(&content_cache.to_table(dataset.catalog.len())?)?;
            let refiner = ctx.refiner()?;
            let prepared = pipeline::prepare(
                &dataset,
                &split,
                cfg,
                variant,
                provider.as_ref(),
                Some(content_path.as_path()),
                oracle.as_ref(),
                &refiner,
            )?;
            let rows = sweep(
                &prepared,
                &dataset,
                &split,
                cfg,
                variant,
                oracle.as_ref(),
                &refiner,
                param,
                &values,
            )?;
            let name = format!("sweep_{}.csv", param.to_string().to_lowercase());
            let file = std::fs::File::create(ctx.path(&name))
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            write_sweep_csv(file, &rows)?;
            for r in &rows {
                let cold = r.report.task(Task::Cold);
                println!(
                    "{param}={} cold recall {:?} ndcg {:?}",
                    r.value,
                    cold.map(|m| m.recall),
                    cold.map(|m| m.ndcg)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
