//! Raw content vectors for items, from interchangeable providers, with a
//! persistent cache.

mod cache;
mod mock;

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::http::{join_url, JsonClient};
use crate::ids::ItemId;
use crate::retry::RetryPolicy;

pub use cache::{warm_cache, CacheStats, ContentCache, WarmOptions};
pub use mock::{fnv1a, mock_embed, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    File,
    Http,
    Mock,
}

/// Source of raw content vectors.
pub trait ContentProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;
    /// Vector width, when known before the first call.
    fn dim(&self) -> Option<usize>;
    fn hash_seed(&self) -> Option<u64> {
        None
    }
    fn embed(&self, item: ItemId, text: &str) -> Result<Vec<f64>>;
}

/// Validated entry point: rejects empty text and non-finite or
/// wrongly-sized results.
pub fn embed_content(provider: &dyn ContentProvider, item: ItemId, text: &str) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let v = provider.embed(item, text)?;
    if let Some(d) = provider.dim() {
        if v.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                actual: v.len(),
            });
        }
    }
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::MalformedResponse(format!(
            "content vector for item {item} is empty or non-finite"
        )));
    }
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct MockProvider {
    pub dim: usize,
    pub seed: u64,
}

impl ContentProvider for MockProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Mock
    }
    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }
    fn hash_seed(&self) -> Option<u64> {
        Some(self.seed)
    }
    fn embed(&self, _item: ItemId, text: &str) -> Result<Vec<f64>> {
        mock_embed(text, self.dim, self.seed)
    }
}

/// Precomputed vectors, one row per item id.
#[derive(Debug, Clone)]
pub struct FileProvider {
    table: EmbeddingTable,
}

impl FileProvider {
    pub fn new(table: EmbeddingTable) -> Self {
        Self { table }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(EmbeddingTable::load(path)?))
    }
}

impl ContentProvider for FileProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::File
    }
    fn dim(&self) -> Option<usize> {
        Some(self.table.dim())
    }
    fn embed(&self, item: ItemId, _text: &str) -> Result<Vec<f64>> {
        if item.index() >= self.table.rows() {
            return Err(Error::UnknownKey(item.0));
        }
        Ok(self.table.row(item.index()).to_vec())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

/// Remote embedding service: `POST {endpoint}/embed` with `{"text": ...}`,
/// answering `{"vector": [...]}`.
#[derive(Debug)]
pub struct HttpProvider {
    url: String,
    client: JsonClient,
    retry: RetryPolicy,
    dim: OnceLock<usize>,
}

impl HttpProvider {
    pub fn new(endpoint: &str, dim: Option<usize>, client: JsonClient, retry: RetryPolicy) -> Self {
        let cell = OnceLock::new();
        if let Some(d) = dim {
            cell.set(d).unwrap();
        }
        Self {
            url: join_url(endpoint, "embed"),
            client,
            retry,
            dim: cell,
        }
    }
}

impl ContentProvider for HttpProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Http
    }
    fn dim(&self) -> Option<usize> {
        self.dim.get().copied()
    }
    fn embed(&self, _item: ItemId, text: &str) -> Result<Vec<f64>> {
        let resp: EmbedResponse = self
            .retry
            .run(|| self.client.post(&self.url, &EmbedRequest { text }))?;
        let d = *self.dim.get_or_init(|| resp.vector.len());
        if resp.vector.len() != d {
            return Err(Error::DimMismatch {
                expected: d,
                actual: resp.vector.len(),
            });
        }
        Ok(resp.vector.into_iter().map(|x| x as f32 as f64).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testserver;

    #[test]
    fn empty_text_is_rejected() {
        let p = MockProvider { dim: 8, seed: 0 };
        assert!(matches!(
            embed_content(&p, ItemId(0), "  "),
            Err(Error::EmptyText)
        ));
    }

    #[test]
    fn deterministic_providers() {
        let p = MockProvider { dim: 16, seed: 3 };
        assert_eq!(
            embed_content(&p, ItemId(0), "a b").unwrap(),
            embed_content(&p, ItemId(9), "a b").unwrap()
        );
        let f =
            FileProvider::new(EmbeddingTable::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(embed_content(&f, ItemId(1), "x").unwrap(), vec![3.0, 4.0]);
        assert_eq!(
            embed_content(&f, ItemId(1), "x").unwrap(),
            embed_content(&f, ItemId(1), "y").unwrap()
        );
        assert!(matches!(
            embed_content(&f, ItemId(2), "x"),
            Err(Error::UnknownKey(2))
        ));
    }

    #[test]
    fn http_provider_protocol() {
        let srv = testserver::serve(|body| {
            let v: serde_json::Value = serde_json::from_str(body).unwrap();
            let n = v["text"].as_str().unwrap().len() as f64;
            (200, format!("{{\"vector\": [{n}, 0.5, -1]}}"))
        });
        let p = HttpProvider::new(
            &srv.url,
            None,
            JsonClient::default(),
            RetryPolicy {
                attempts: 1,
                base_delay_ms: 0,
            },
        );
        assert_eq!(p.dim(), None);
        let v = embed_content(&p, ItemId(0), "hello").unwrap();
        assert_eq!(v, vec![5.0, 0.5, -1.0]);
        assert_eq!(p.dim(), Some(3));
        let reqs = srv.requests.lock().unwrap();
        assert!(reqs[0].starts_with("POST /embed"));
        assert!(reqs[0].contains("{\"text\":\"hello\"}"), "{reqs:?}");
    }

    #[test]
    fn http_provider_retries_then_surfaces() {
        let srv = testserver::serve(|_| (500, "boom".into()));
        let p = HttpProvider::new(
            &srv.url,
            Some(3),
            JsonClient::default(),
            RetryPolicy {
                attempts: 3,
                base_delay_ms: 1,
            },
        );
        assert!(matches!(
            embed_content(&p, ItemId(0), "x"),
            Err(Error::Transport(_))
        ));
        assert_eq!(srv.requests.lock().unwrap().len(), 3);

        let bad = testserver::serve(|_| (200, "{\"vec\": []}".into()));
        let p = HttpProvider::new(
            &bad.url,
            None,
            JsonClient::default(),
            RetryPolicy::default(),
        );
        assert!(matches!(
            embed_content(&p, ItemId(0), "x"),
            Err(Error::MalformedResponse(_))
        ));
    }
}
