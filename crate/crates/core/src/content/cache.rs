use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_json, write_json, ItemCatalog};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::ids::ItemId;

use super::{embed_content, ContentProvider, ProviderKind};

/// Item-keyed content vectors from one provider configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentCache {
    kind: ProviderKind,
    dim: Option<usize>,
    hash_seed: Option<u64>,
    vectors: BTreeMap<ItemId, Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    kind: ProviderKind,
    dim: Option<usize>,
    hash_seed: Option<u64>,
    /// Item id of each row in the binary file.
    items: Vec<ItemId>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl ContentCache {
    pub fn new(kind: ProviderKind, dim: Option<usize>, hash_seed: Option<u64>) -> Self {
        Self {
            kind,
            dim,
            hash_seed,
            vectors: BTreeMap::new(),
        }
    }

    pub fn for_provider(p: &dyn ContentProvider) -> Self {
        Self::new(p.kind(), p.dim(), p.hash_seed())
    }

    pub fn kind(&self) -> ProviderKind {
        self.kind
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, item: ItemId) -> Option<&[f64]> {
        self.vectors.get(&item).map(Vec::as_slice)
    }

    /// Vector for `item`, or [`Error::UnknownKey`].
    pub fn vector(&self, item: ItemId) -> Result<&[f64]> {
        self.get(item).ok_or(Error::UnknownKey(item.0))
    }

    pub fn insert(&mut self, item: ItemId, v: Vec<f64>) -> Result<()> {
        match self.dim {
            Some(d) if d != v.len() => {
                return Err(Error::DimMismatch {
                    expected: d,
                    actual: v.len(),
                })
            }
            None => self.dim = Some(v.len()),
            _ => {}
        }
        self.vectors.insert(item, v);
        Ok(())
    }

    /// Whether a stored cache was produced by an equivalent provider.
    pub fn compatible_with(&self, p: &dyn ContentProvider) -> bool {
        self.kind == p.kind()
            && self.hash_seed == p.hash_seed()
            && match (self.dim, p.dim()) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            }
    }

    /// Dense `n_items x dim` table; every item must be cached.
    pub fn to_table(&self, n_items: usize) -> Result<EmbeddingTable> {
        let dim = self.dim.unwrap_or(0);
        let mut t = EmbeddingTable::zeros(n_items, dim);
        for i in 0..n_items {
            t.set_row(i, self.vector(ItemId::from(i))?)?;
        }
        Ok(t)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let dim = self.dim.unwrap_or(0);
        let rows: Vec<Vec<f64>> = self.vectors.values().cloned().collect();
        EmbeddingTable::from_rows(dim, &rows)?.save(path)?;
        let side = Sidecar {
            kind: self.kind,
            dim: self.dim,
            hash_seed: self.hash_seed,
            items: self.vectors.keys().copied().collect(),
        };
        write_json(sidecar_path(path), &side)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side: Sidecar = read_json(sidecar_path(path))?;
        let table = EmbeddingTable::load(path)?;
        if table.rows() != side.items.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!(
                    "sidecar lists {} items but file has {} rows",
                    side.items.len(),
                    table.rows()
                ),
            });
        }
        let vectors = side
            .items
            .iter()
            .zip(table.iter_rows())
            .map(|(&i, r)| (i, r.to_vec()))
            .collect();
        Ok(Self {
            kind: side.kind,
            dim: side.dim,
            hash_seed: side.hash_seed,
            vectors,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarmOptions {
    pub max_inflight: usize,
}

impl Default for WarmOptions {
    fn default() -> Self {
        Self { max_inflight: 8 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub computed: usize,
}

/// Ensures every catalog item has a cached vector, resuming from `path`
/// when it holds a compatible cache. Requests run on at most
/// `max_inflight` threads. When some items fail the successful ones are
/// still persisted before the first error is returned.
pub fn warm_cache(
    provider: &dyn ContentProvider,
    catalog: &ItemCatalog,
    path: Option<&Path>,
    opts: &WarmOptions,
) -> Result<(ContentCache, CacheStats)> {
    let mut cache = match path {
        Some(p) if p.exists() => {
            let c = ContentCache::load(p)?;
            if c.compatible_with(provider) {
                c
            } else {
                log::warn!(
                    "content cache at {} was built by a different provider; rebuilding",
                    p.display()
                );
                ContentCache::for_provider(provider)
            }
        }
        _ => ContentCache::for_provider(provider),
    };

    let missing: Vec<(ItemId, &str)> = catalog
        .iter()
        .filter(|(i, _)| cache.get(*i).is_none())
        .map(|(i, e)| (i, e.content.as_str()))
        .collect();
    let stats = CacheStats {
        hits: catalog.len() - missing.len(),
        computed: 0,
    };
    if missing.is_empty() {
        if let Some(p) = path {
            if !p.exists() {
                cache.save(p)?;
            }
        }
        return Ok((cache, stats));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.max_inflight.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<(ItemId, Result<Vec<f64>>)> = pool.install(|| {
        missing
            .par_iter()
            .map(|&(i, text)| (i, embed_content(provider, i, text)))
            .collect()
    });

    let mut first_err = None;
    let mut computed = 0;
    for (item, r) in results {
        match r.and_then(|v| cache.insert(item, v)) {
            Ok(()) => computed += 1,
            Err(e) => {
                log::warn!("content vector for item {item} failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(p) = path {
        cache.save(p)?;
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok((cache, CacheStats { computed, ..stats })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::content::{mock_embed, MockProvider};
    use crate::corpus::ItemContent;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting<P> {
        inner: P,
        calls: AtomicUsize,
        fail_on: Option<ItemId>,
    }

    impl<P: ContentProvider> ContentProvider for Counting<P> {
        fn kind(&self) -> ProviderKind {
            self.inner.kind()
        }
        fn dim(&self) -> Option<usize> {
            self.inner.dim()
        }
        fn hash_seed(&self) -> Option<u64> {
            self.inner.hash_seed()
        }
        fn embed(&self, item: ItemId, text: &str) -> Result<Vec<f64>> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if Some(item) == self.fail_on {
                return Err(Error::Transport("unreachable".into()));
            }
            self.inner.embed(item, text)
        }
    }

    fn catalog(n: usize) -> ItemCatalog {
        ItemCatalog::new(
            (0..n)
                .map(|i| ItemContent {
                    title: format!("t{i}"),
                    content: format!("item number {i} about topic {}", i % 3),
                    features: vec![],
                })
                .collect(),
        )
        .unwrap()
    }

    fn counting(fail_on: Option<ItemId>) -> Counting<MockProvider> {
        Counting {
            inner: MockProvider { dim: 32, seed: 1 },
            calls: AtomicUsize::new(0),
            fail_on,
        }
    }

    #[test]
    fn empty_catalog() {
        let (c, s) =
            warm_cache(&counting(None), &catalog(0), None, &WarmOptions::default()).unwrap();
        assert!(c.is_empty());
        assert_eq!(s, CacheStats::default());
    }

    #[test]
    fn ten_items_match_direct_calls_and_rerun_hits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("content.cemb");
        let cat = catalog(10);
        let p = counting(None);
        let (c, s) = warm_cache(&p, &cat, Some(&path), &WarmOptions { max_inflight: 3 }).unwrap();
        assert_eq!(
            s,
            CacheStats {
                hits: 0,
                computed: 10
            }
        );
        for (i, e) in cat.iter() {
            assert_eq!(
                c.get(i).unwrap(),
                mock_embed(&e.content, 32, 1).unwrap().as_slice()
            );
        }
        let p2 = counting(None);
        let (c2, s2) = warm_cache(&p2, &cat, Some(&path), &WarmOptions::default()).unwrap();
        assert_eq!(p2.calls.load(Ordering::SeqCst), 0);
        assert_eq!(
            s2,
            CacheStats {
                hits: 10,
                computed: 0
            }
        );
        // bit-identical after the disk round trip
        assert_eq!(c2, c);
    }

    #[test]
    fn partial_cache_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("content.cemb");
        let cat = catalog(6);
        let failing = counting(Some(ItemId(4)));
        assert!(warm_cache(&failing, &cat, Some(&path), &WarmOptions::default()).is_err());
        assert_eq!(ContentCache::load(&path).unwrap().len(), 5);
        let p = counting(None);
        let (c, s) = warm_cache(&p, &cat, Some(&path), &WarmOptions::default()).unwrap();
        assert_eq!(p.calls.load(Ordering::SeqCst), 1);
        assert_eq!(
            s,
            CacheStats {
                hits: 5,
                computed: 1
            }
        );
        assert_eq!(c.len(), 6);
    }

    #[test]
    fn incompatible_cache_is_rebuilt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("content.cemb");
        let cat = catalog(3);
        warm_cache(
            &MockProvider { dim: 16, seed: 0 },
            &cat,
            Some(&path),
            &WarmOptions::default(),
        )
        .unwrap();
        let (c, s) = warm_cache(
            &MockProvider { dim: 8, seed: 0 },
            &cat,
            Some(&path),
            &WarmOptions::default(),
        )
        .unwrap();
        assert_eq!(s.computed, 3);
        assert_eq!(c.dim(), Some(8));
    }

    #[test]
    fn dim_is_enforced() {
        let mut c = ContentCache::new(ProviderKind::Http, None, None);
        c.insert(ItemId(0), vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            c.insert(ItemId(1), vec![1.0]),
            Err(Error::DimMismatch { .. })
        ));
    }
}
