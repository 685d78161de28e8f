use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ItemId, UserId};

use super::{read_text, sort_raw_ids, Dataset, IdMap, InteractionLog, ItemCatalog, ItemContent};

/// File layout of a CiteULike dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CiteulikeOptions {
    /// One line per user with whitespace-separated item ids.
    pub users_file: String,
    /// Tab-separated `id, title, abstract` per item.
    pub items_file: String,
    /// Lines start with the number of items that follow (the layout of the
    /// public `users.dat`). The count is checked against the ids on the line.
    pub leading_count: bool,
}

impl Default for CiteulikeOptions {
    fn default() -> Self {
        Self {
            users_file: "users.dat".into(),
            items_file: "items.tsv".into(),
            leading_count: true,
        }
    }
}

pub fn load_citeulike(dir: impl AsRef<Path>) -> Result<Dataset> {
    load_citeulike_with(dir, &CiteulikeOptions::default())
}

pub fn load_citeulike_with(dir: impl AsRef<Path>, opts: &CiteulikeOptions) -> Result<Dataset> {
    let dir = dir.as_ref();
    let items_path = dir.join(&opts.items_file);
    let users_path = dir.join(&opts.users_file);

    let (item_ids, catalog, item_index) = read_items(&items_path)?;
    let text = read_text(&users_path)?;

    let mut users = Vec::new();
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        if opts.leading_count {
            let declared: usize = tokens
                .next()
                .unwrap()
                .parse()
                .map_err(|_| malformed(&users_path, lineno, "count is not an integer"))?;
            let rest = tokens.clone().count();
            if declared != rest {
                return Err(malformed(
                    &users_path,
                    lineno,
                    &format!("declared {declared} items, found {rest}"),
                ));
            }
        }
        let user = UserId::from(users.len());
        users.push(users.len().to_string());
        for tok in tokens {
            let item = *item_index.get(tok).ok_or_else(|| Error::MissingMetadata {
                path: users_path.clone(),
                line: lineno + 1,
                raw: tok.to_string(),
            })?;
            pairs.push((user, item));
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoInteractions(users_path));
    }
    let log = InteractionLog::new(users.len(), item_ids.len(), pairs)?;
    Dataset::new(
        log,
        catalog,
        IdMap {
            users,
            items: item_ids,
        },
    )
}

fn malformed(path: &Path, lineno: usize, msg: &str) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        line: lineno + 1,
        msg: msg.to_string(),
    }
}

type ItemTable = (Vec<String>, ItemCatalog, HashMap<String, ItemId>);

fn read_items(path: &Path) -> Result<ItemTable> {
    let text = read_text(path)?;
    let mut raw: HashMap<String, ItemContent> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let id = fields.next().unwrap_or("").trim();
        if lineno == 0 && id.eq_ignore_ascii_case("id") {
            continue;
        }
        let title = fields
            .next()
            .ok_or_else(|| malformed(path, lineno, "expected id<TAB>title<TAB>abstract"))?
            .trim();
        let abstract_ = fields.next().unwrap_or("").trim();
        if id.is_empty() {
            return Err(malformed(path, lineno, "empty item id"));
        }
        let content = match (title.is_empty(), abstract_.is_empty()) {
            (true, true) => {
                return Err(malformed(
                    path,
                    lineno,
                    "item has neither title nor abstract",
                ))
            }
            (false, true) => title.to_string(),
            (true, false) => abstract_.to_string(),
            (false, false) => format!("{title} {abstract_}"),
        };
        let entry = ItemContent {
            title: if title.is_empty() {
                abstract_.to_string()
            } else {
                title.to_string()
            },
            content,
            features: Vec::new(),
        };
        if raw.insert(id.to_string(), entry).is_some() {
            return Err(malformed(path, lineno, &format!("duplicate item id {id}")));
        }
    }
    let mut ids: Vec<String> = raw.keys().cloned().collect();
    sort_raw_ids(&mut ids);
    let index = ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), ItemId::from(i)))
        .collect();
    let entries = ids.iter().map(|id| raw.remove(id).unwrap()).collect();
    Ok((ids, ItemCatalog::new(entries)?, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, users: &str, items: &str) {
        fs::write(dir.join("users.dat"), users).unwrap();
        fs::write(dir.join("items.tsv"), items).unwrap();
    }

    const ITEMS: &str = "0\tDeep nets\tLayers of units\n1\tBayes\tPriors and posteriors\n";

    #[test]
    fn toy_three_users_two_items() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "2 0 1\n1 1\n1 0\n", ITEMS);
        let ds = load_citeulike(dir.path()).unwrap();
        assert_eq!(ds.log.n_users(), 3);
        assert_eq!(ds.log.n_items(), 2);
        let pairs: Vec<(u32, u32)> = ds.log.pairs().iter().map(|(u, i)| (u.0, i.0)).collect();
        assert_eq!(pairs, vec![(0, 0), (0, 1), (1, 1), (2, 0)]);
        assert_eq!(ds.catalog.get(ItemId(1)).title, "Bayes");
        assert_eq!(
            ds.catalog.get(ItemId(0)).content,
            "Deep nets Layers of units"
        );
    }

    #[test]
    fn without_leading_count() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "0 1\n1\n", ITEMS);
        let opts = CiteulikeOptions {
            leading_count: false,
            ..Default::default()
        };
        let ds = load_citeulike_with(dir.path(), &opts).unwrap();
        assert_eq!(ds.log.len(), 3);
    }

    #[test]
    fn empty_interactions() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "", ITEMS);
        let err = load_citeulike(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no interactions"), "{err}");
    }

    #[test]
    fn count_mismatch_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "1 0\n3 0 1\n", ITEMS);
        match load_citeulike(dir.path()).unwrap_err() {
            Error::Malformed { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn item_without_metadata() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "1 0\n1 7\n", ITEMS);
        match load_citeulike(dir.path()).unwrap_err() {
            Error::MissingMetadata { line, raw, .. } => {
                assert_eq!(line, 2);
                assert_eq!(raw, "7");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_citeulike(dir.path()), Err(Error::Io { .. })));
    }
}
