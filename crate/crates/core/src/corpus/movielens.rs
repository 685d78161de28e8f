use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ItemId, UserId};

use super::{read_text, sort_raw_ids, Dataset, IdMap, InteractionLog, ItemCatalog, ItemContent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MovielensOptions {
    pub ratings_file: String,
    pub movies_file: String,
    /// Ratings strictly below this are dropped. The default keeps every
    /// record as an implicit positive.
    pub min_rating: f64,
}

impl Default for MovielensOptions {
    fn default() -> Self {
        Self {
            ratings_file: "ratings.dat".into(),
            movies_file: "movies.dat".into(),
            min_rating: 0.0,
        }
    }
}

pub fn load_movielens(dir: impl AsRef<Path>) -> Result<Dataset> {
    load_movielens_with(dir, &MovielensOptions::default())
}

pub fn load_movielens_with(dir: impl AsRef<Path>, opts: &MovielensOptions) -> Result<Dataset> {
    let dir = dir.as_ref();
    let movies_path = dir.join(&opts.movies_file);
    let ratings_path = dir.join(&opts.ratings_file);
    let malformed = |path: &Path, lineno: usize, msg: String| Error::Malformed {
        path: path.to_path_buf(),
        line: lineno + 1,
        msg,
    };

    let mut movies: HashMap<String, ItemContent> = HashMap::new();
    for (lineno, line) in read_text(&movies_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split("::").collect();
        if f.len() != 3 {
            return Err(malformed(
                &movies_path,
                lineno,
                format!("expected 3 '::' fields, found {}", f.len()),
            ));
        }
        let title = f[1].trim();
        let genres: Vec<String> = f[2]
            .split('|')
            .map(str::trim)
            .filter(|g| !g.is_empty())
            .map(String::from)
            .collect();
        if title.is_empty() {
            return Err(malformed(&movies_path, lineno, "empty title".into()));
        }
        let content = if genres.is_empty() {
            title.to_string()
        } else {
            format!("{title} {}", genres.join(" "))
        };
        let entry = ItemContent {
            title: title.to_string(),
            content,
            features: genres,
        };
        if movies.insert(f[0].trim().to_string(), entry).is_some() {
            return Err(malformed(
                &movies_path,
                lineno,
                format!("duplicate movie id {}", f[0]),
            ));
        }
    }
    let mut item_ids: Vec<String> = movies.keys().cloned().collect();
    sort_raw_ids(&mut item_ids);
    let item_index: HashMap<&str, ItemId> = item_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), ItemId::from(i)))
        .collect();

    let ratings = read_text(&ratings_path)?;
    let mut records = Vec::new();
    let mut user_set = BTreeSet::new();
    for (lineno, line) in ratings.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split("::").collect();
        if f.len() != 4 {
            return Err(malformed(
                &ratings_path,
                lineno,
                format!("expected 4 '::' fields, found {}", f.len()),
            ));
        }
        let user: u64 = f[0]
            .trim()
            .parse()
            .map_err(|_| malformed(&ratings_path, lineno, "user id is not an integer".into()))?;
        let rating: f64 = f[2]
            .trim()
            .parse()
            .map_err(|_| malformed(&ratings_path, lineno, "rating is not a number".into()))?;
        let item = *item_index
            .get(f[1].trim())
            .ok_or_else(|| Error::MissingMetadata {
                path: ratings_path.clone(),
                line: lineno + 1,
                raw: f[1].trim().to_string(),
            })?;
        if rating < opts.min_rating {
            continue;
        }
        user_set.insert(user);
        records.push((user, item));
    }
    if records.is_empty() {
        return Err(Error::NoInteractions(ratings_path));
    }
    let users: Vec<u64> = user_set.into_iter().collect();
    let user_index: HashMap<u64, UserId> = users
        .iter()
        .enumerate()
        .map(|(i, &u)| (u, UserId::from(i)))
        .collect();
    let pairs = records.into_iter().map(|(u, i)| (user_index[&u], i));
    let log = InteractionLog::new(users.len(), item_ids.len(), pairs)?;
    let catalog = ItemCatalog::new(
        item_ids
            .iter()
            .map(|id| movies.remove(id).unwrap())
            .collect(),
    )?;
    let ids = IdMap {
        users: users.iter().map(u64::to_string).collect(),
        items: item_ids,
    };
    Dataset::new(log, catalog, ids)
}
