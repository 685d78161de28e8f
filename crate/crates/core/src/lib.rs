//! Cold-start item warmup by simulating the first interactions of new
//! items.
//!
//! A matrix-factorization backbone is trained on warm interactions. For
//! each cold item, two-tower filters propose likely users, an answer
//! oracle refines the proposal, and the item's embedding is then fitted to
//! the simulated users before ordinary evaluation.

pub mod backbone;
pub mod config;
pub mod content;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod filter;
pub mod http;
pub mod ids;
pub mod math;
pub mod optim;
pub mod pipeline;
pub mod refiner;
pub mod retry;
pub mod synthetic;
pub mod topk;
pub mod warmup;

pub use backbone::{train_backbone, BackboneConfig, BackboneModel};
pub use config::Config;
pub use corpus::{make_cold_split, ColdWarmSplit, Dataset, ItemCatalog};
pub use embedding::EmbeddingTable;
pub use error::{Error, Result};
pub use eval::{evaluate_all, AdoptionStats, EvalOptions, EvalReport, Task};
pub use filter::{FilterConfig, TwoTowerFilter, Variant};
pub use ids::{ItemId, Pair, UserId};
pub use pipeline::{AblationVariant, PipelineRun, Prepared};
pub use refiner::{DecisionRecord, Oracle, OracleKind, RefinerConfig, Simulation};
pub use warmup::{WarmupConfig, WarmupReport};
