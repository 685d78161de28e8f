//! Interaction logs, item content, dataset loaders and the cold/warm split.

mod citeulike;
mod movielens;
mod split;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ItemId, Pair, UserId};

pub use citeulike::{load_citeulike, load_citeulike_with, CiteulikeOptions};
pub use movielens::{load_movielens, load_movielens_with, MovielensOptions};
pub use split::{make_cold_split, ColdWarmSplit};

/// The historical interaction set with per-item and per-user sequences.
///
/// Sequences keep first-seen order; duplicate pairs are dropped on
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    n_users: usize,
    n_items: usize,
    pairs: Vec<Pair>,
    item_users: Vec<Vec<UserId>>,
    user_items: Vec<Vec<ItemId>>,
}

impl InteractionLog {
    pub fn new(
        n_users: usize,
        n_items: usize,
        pairs: impl IntoIterator<Item = Pair>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        let mut item_users = vec![Vec::new(); n_items];
        let mut user_items = vec![Vec::new(); n_users];
        for (u, i) in pairs {
            if u.index() >= n_users {
                return Err(Error::OutOfBounds {
                    kind: "user",
                    id: u.index(),
                    len: n_users,
                });
            }
            if i.index() >= n_items {
                return Err(Error::OutOfBounds {
                    kind: "item",
                    id: i.index(),
                    len: n_items,
                });
            }
            if seen.insert((u, i)) {
                kept.push((u, i));
                item_users[i.index()].push(u);
                user_items[u.index()].push(i);
            }
        }
        Ok(Self {
            n_users,
            n_items,
            pairs: kept,
            item_users,
            user_items,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    /// The user sequence `s_i` of an item.
    pub fn item_users(&self, item: ItemId) -> &[UserId] {
        &self.item_users[item.index()]
    }

    pub fn user_items(&self, user: UserId) -> &[ItemId] {
        &self.user_items[user.index()]
    }
}

/// Content of one item. `content` is the full text handed to content
/// providers and the oracle; `title` is what appears in user contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemContent {
    pub title: String,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemCatalog {
    entries: Vec<ItemContent>,
}

impl ItemCatalog {
    pub fn new(entries: Vec<ItemContent>) -> Result<Self> {
        if let Some(i) = entries.iter().position(|e| e.content.trim().is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "item {i} has empty content"
            )));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, item: ItemId) -> &ItemContent {
        &self.entries[item.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ItemId, &ItemContent)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (ItemId::from(i), e))
    }
}

/// Raw dataset identifiers for each dense id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IdMap {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

/// A loaded dataset: interactions, content and the id mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub log: InteractionLog,
    pub catalog: ItemCatalog,
    pub ids: IdMap,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    ids: IdMap,
    catalog: ItemCatalog,
    interactions: Vec<Pair>,
}

impl Dataset {
    pub fn new(log: InteractionLog, catalog: ItemCatalog, ids: IdMap) -> Result<Self> {
        if catalog.len() != log.n_items() {
            return Err(Error::DimMismatch {
                expected: log.n_items(),
                actual: catalog.len(),
            });
        }
        Ok(Self { log, catalog, ids })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = DatasetFile {
            ids: self.ids.clone(),
            catalog: self.catalog.clone(),
            interactions: self.log.pairs().to_vec(),
        };
        write_json(path, &file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: DatasetFile = read_json(path)?;
        let log = InteractionLog::new(
            file.ids.users.len(),
            file.ids.items.len(),
            file.interactions,
        )?;
        Dataset::new(log, file.catalog, file.ids)
    }

    /// Writes the id mapping on its own.
    pub fn save_id_map(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, &self.ids)
    }
}

pub(crate) fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut w, value)?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Reads a text file, falling back to Latin-1 when it is not valid UTF-8
/// (the MovieLens metadata is Latin-1 encoded).
pub(crate) fn read_text(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => e.into_bytes().iter().map(|&b| b as char).collect(),
    })
}

/// Sorts raw ids numerically when they all parse as integers, otherwise
/// lexicographically.
pub(crate) fn sort_raw_ids(ids: &mut [String]) {
    if ids.iter().all(|s| s.parse::<u64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<u64>().unwrap());
    } else {
        ids.sort();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_dedups_and_indexes() {
        let log = InteractionLog::new(
            2,
            3,
            [
                (UserId(0), ItemId(2)),
                (UserId(1), ItemId(2)),
                (UserId(0), ItemId(2)),
                (UserId(0), ItemId(0)),
            ],
        )
        .unwrap();
        assert_eq!(log.len(), 3);
        assert_eq!(log.item_users(ItemId(2)), &[UserId(0), UserId(1)]);
        assert_eq!(log.user_items(UserId(0)), &[ItemId(2), ItemId(0)]);
        assert!(log.item_users(ItemId(1)).is_empty());
    }

    #[test]
    fn log_rejects_out_of_range() {
        assert!(InteractionLog::new(1, 1, [(UserId(0), ItemId(1))]).is_err());
        assert!(InteractionLog::new(1, 1, [(UserId(1), ItemId(0))]).is_err());
    }

    #[test]
    fn catalog_rejects_empty_content() {
        let e = ItemContent {
            title: "t".into(),
            content: "  ".into(),
            features: vec![],
        };
        assert!(ItemCatalog::new(vec![e]).is_err());
    }

    #[test]
    fn raw_id_ordering() {
        let mut v = vec!["10".to_string(), "9".into(), "100".into()];
        sort_raw_ids(&mut v);
        assert_eq!(v, ["9", "10", "100"]);
        let mut w = vec!["b".to_string(), "a".into(), "10".into()];
        sort_raw_ids(&mut w);
        assert_eq!(w, ["10", "a", "b"]);
    }
}
