use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::NegativeSampler;
use crate::corpus::ColdWarmSplit;
use crate::error::{Error, Result};
use crate::ids::{ItemId, Pair, UserId};
use crate::math::rng_for;

use super::RefineEnv;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinetuneMode {
    /// Positives against uniformly sampled unobserved items.
    Offline,
    /// Positives against explicit negatives, plus positives against
    /// unobserved items.
    Online,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub prompt: String,
    pub completion: String,
}

fn record(env: &RefineEnv<'_>, (u, i): Pair, yes: bool) -> FinetuneRecord {
    let context = env.context(u, i);
    FinetuneRecord {
        prompt: env.prompt(&context, i),
        completion: if yes { "Yes" } else { "No" }.into(),
    }
}

/// Builds balanced Yes/No training records from warm-train positives.
///
/// Every positive that gets a negative contributes exactly one Yes per No,
/// so the output is 1:1. `max_positives` caps the number of positives,
/// drawn without replacement. Unobserved negatives come from the warm items
/// the user has no interaction with in any warm split. Online mode pairs
/// each positive once with an explicit negative (preferably the same
/// user's) and once more with an unobserved item.
pub fn prepare_finetune_data(
    split: &ColdWarmSplit,
    env: &RefineEnv<'_>,
    mode: FinetuneMode,
    explicit_negatives: &[Pair],
    max_positives: Option<usize>,
    seed: u64,
) -> Result<Vec<FinetuneRecord>> {
    if split.warm_train.is_empty() {
        return Err(Error::NoPositives);
    }
    if mode == FinetuneMode::Online && explicit_negatives.is_empty() {
        return Err(Error::InvalidArgument(
            "online mode needs explicit negative interactions".into(),
        ));
    }
    let mut rng = rng_for(seed, 31);
    let mut positives = split.warm_train.clone();
    if let Some(n) = max_positives {
        positives.shuffle(&mut rng);
        positives.truncate(n);
    }
    let observed: Vec<Pair> = split
        .warm_train
        .iter()
        .chain(&split.warm_val)
        .chain(&split.warm_test)
        .copied()
        .collect();
    let sampler = NegativeSampler::new(split.n_users, &observed, &split.warm_items);

    let mut by_user: HashMap<UserId, Vec<ItemId>> = HashMap::new();
    for &(u, j) in explicit_negatives {
        by_user.entry(u).or_default().push(j);
    }

    let mut out = Vec::new();
    let mut skipped = 0usize;
    for &p in &positives {
        if mode == FinetuneMode::Online {
            let j = match by_user.get(&p.0) {
                Some(js) => js[rng.random_range(0..js.len())],
                None => explicit_negatives[rng.random_range(0..explicit_negatives.len())].1,
            };
            out.push(record(env, p, true));
            out.push(record(env, (p.0, j), false));
        }
        match sampler.sample(p.0, &mut rng) {
            Some(j) => {
                out.push(record(env, p, true));
                out.push(record(env, (p.0, j), false));
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} positives had no unobserved warm item and were skipped");
    }
    Ok(out)
}

/// One `{"prompt", "completion"}` object per line.
pub fn write_finetune(path: impl AsRef<Path>, records: &[FinetuneRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
