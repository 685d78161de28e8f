use std::collections::HashSet;
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::http::{join_url, JsonClient};
use crate::ids::{ItemId, Pair, UserId};
use crate::math::{axpy, cosine};
use crate::retry::RetryPolicy;

use super::prompt::parse_answer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    MockThreshold,
    Planted,
    Http,
    /// Answers the same for every pair; for tests and dry runs.
    Constant,
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleKind::MockThreshold => "mock-threshold",
            OracleKind::Planted => "planted",
            OracleKind::Http => "http",
            OracleKind::Constant => "constant",
        })
    }
}

/// Everything an oracle may look at for one (user, item) judgment.
#[derive(Debug, Clone, Copy)]
pub struct OracleQuery<'a> {
    pub user: UserId,
    pub item: ItemId,
    pub context: &'a [ItemId],
    pub prompt: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleDecision {
    pub z: u8,
    pub raw: String,
    pub latency: Duration,
}

pub trait Oracle: Send + Sync {
    fn kind(&self) -> OracleKind;
    fn decide(&self, q: &OracleQuery<'_>) -> Result<OracleDecision>;
}

fn local(z: bool, start: Instant) -> OracleDecision {
    OracleDecision {
        z: u8::from(z),
        raw: if z { "Yes" } else { "No" }.to_string(),
        latency: start.elapsed(),
    }
}

/// Accepts when the cosine between the item's raw content vector and the
/// mean raw vector of the context items reaches `tau`.
pub struct MockThresholdOracle {
    content: EmbeddingTable,
    tau: f64,
}

/// Default acceptance threshold of the mock oracle.
pub const DEFAULT_TAU: f64 = 0.3;

impl MockThresholdOracle {
    pub fn new(content: EmbeddingTable, tau: f64) -> Self {
        Self { content, tau }
    }
}

impl Oracle for MockThresholdOracle {
    fn kind(&self) -> OracleKind {
        OracleKind::MockThreshold
    }

    fn decide(&self, q: &OracleQuery<'_>) -> Result<OracleDecision> {
        let start = Instant::now();
        if q.context.is_empty() {
            return Ok(local(false, start));
        }
        let mut mean = vec![0.0; self.content.dim()];
        for &j in q.context {
            axpy(
                1.0 / q.context.len() as f64,
                self.content.row(j.index()),
                &mut mean,
            );
        }
        Ok(local(
            cosine(self.content.row(q.item.index()), &mean) >= self.tau,
            start,
        ))
    }
}

/// Accepts exactly the pairs of an injected ground-truth set.
pub struct PlantedOracle {
    truth: HashSet<Pair>,
}

impl PlantedOracle {
    pub fn new(truth: impl IntoIterator<Item = Pair>) -> Self {
        Self {
            truth: truth.into_iter().collect(),
        }
    }
}

impl Oracle for PlantedOracle {
    fn kind(&self) -> OracleKind {
        OracleKind::Planted
    }

    fn decide(&self, q: &OracleQuery<'_>) -> Result<OracleDecision> {
        Ok(local(
            self.truth.contains(&(q.user, q.item)),
            Instant::now(),
        ))
    }
}

pub struct ConstantOracle(pub bool);

impl Oracle for ConstantOracle {
    fn kind(&self) -> OracleKind {
        OracleKind::Constant
    }

    fn decide(&self, _: &OracleQuery<'_>) -> Result<OracleDecision> {
        Ok(local(self.0, Instant::now()))
    }
}

/// Remote oracle. The plain protocol posts `{"prompt"}` to `/simulate` and
/// reads `{"answer"}`; the chat adapter posts `{"messages": [...]}` to the
/// endpoint as given and reads the first message text of the reply.
pub struct HttpOracle {
    url: String,
    chat: bool,
    client: JsonClient,
    retry: RetryPolicy,
}

impl HttpOracle {
    pub fn new(endpoint: &str, client: JsonClient, retry: RetryPolicy) -> Self {
        Self {
            url: join_url(endpoint, "simulate"),
            chat: false,
            client,
            retry,
        }
    }

    pub fn chat(url: &str, client: JsonClient, retry: RetryPolicy) -> Self {
        Self {
            url: url.to_string(),
            chat: true,
            client,
            retry,
        }
    }

    fn answer_text(&self, prompt: &str) -> Result<String> {
        if !self.chat {
            let v: Value = self.client.post(&self.url, &json!({ "prompt": prompt }))?;
            return v
                .get("answer")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| Error::MalformedResponse(format!("no \"answer\" string in {v}")));
        }
        let body = json!({ "messages": [{ "role": "user", "content": prompt }] });
        let v: Value = self.client.post(&self.url, &body)?;
        let text = [
            "/choices/0/message/content",
            "/messages/0/content",
            "/message/content",
        ]
        .into_iter()
        .find_map(|p| v.pointer(p).and_then(Value::as_str))
        .map(str::to_string);
        text.ok_or_else(|| Error::MalformedResponse(format!("no message text in {v}")))
    }
}

impl Oracle for HttpOracle {
    fn kind(&self) -> OracleKind {
        OracleKind::Http
    }

    fn decide(&self, q: &OracleQuery<'_>) -> Result<OracleDecision> {
        let start = Instant::now();
        let raw = self.retry.run(|| self.answer_text(q.prompt))?;
        let z = parse_answer(&raw)?;
        Ok(OracleDecision {
            z,
            raw,
            latency: start.elapsed(),
        })
    }
}
