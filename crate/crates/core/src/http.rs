//! Blocking JSON-over-HTTP helper shared by the remote content provider
//! and the remote oracle.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
}

impl JsonClient {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }

    /// POSTs `body`; transport failures and non-200 statuses map to
    /// [`Error::Transport`], undecodable bodies to [`Error::MalformedResponse`].
    pub fn post<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R> {
        let payload = serde_json::to_vec(body)?;
        let resp = self
            .agent
            .post(url)
            .header("content-type", "application/json")
            .send(&payload[..])
            .map_err(|e| Error::Transport(format!("{url}: {e}")))?;
        let status = resp.status().as_u16();
        let mut body = resp.into_body();
        if status != 200 {
            let text = body.read_to_string().unwrap_or_default();
            return Err(Error::Transport(format!(
                "{url}: HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            )));
        }
        let text = body
            .read_to_string()
            .map_err(|e| Error::Transport(format!("{url}: reading body: {e}")))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedResponse(format!("{url}: {e}")))
    }
}

impl Default for JsonClient {
    fn default() -> Self {
        Self::new(DEFAULT_TIMEOUT)
    }
}

pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!(
        "{}/{}",
        base.trim_end_matches('/'),
        path.trim_start_matches('/')
    )
}

/// Minimal single-threaded HTTP responder for tests.
#[cfg(test)]
pub(crate) mod testserver {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    pub struct Server {
        pub url: String,
        pub requests: Arc<Mutex<Vec<String>>>,
    }

    /// Serves requests until the process exits; `handler` maps a request
    /// body to `(status, body)`.
    pub fn serve<F>(handler: F) -> Server
    where
        F: Fn(&str) -> (u16, String) + Send + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut line = String::new();
                let mut first = String::new();
                loop {
                    line.clear();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    if first.is_empty() {
                        first = line.trim().to_string();
                    }
                    let l = line.to_ascii_lowercase();
                    if let Some(v) = l.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut body = vec![0u8; len];
                reader.read_exact(&mut body).ok();
                let body = String::from_utf8_lossy(&body).to_string();
                log.lock().unwrap().push(format!("{first}\n{body}"));
                let (status, out) = handler(&body);
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{out}",
                    out.len()
                );
                stream.write_all(resp.as_bytes()).ok();
            }
        });
        Server { url, requests }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_joining() {
        assert_eq!(join_url("http://h:1/", "/embed"), "http://h:1/embed");
        assert_eq!(join_url("http://h:1", "embed"), "http://h:1/embed");
    }

    #[test]
    fn non_200_is_transport_error() {
        let srv = testserver::serve(|_| (503, "{}".into()));
        let c = JsonClient::default();
        let r: Result<serde_json::Value> = c.post(&join_url(&srv.url, "x"), &serde_json::json!({}));
        assert!(matches!(r, Err(Error::Transport(m)) if m.contains("503")));
    }

    #[test]
    fn bad_json_is_malformed() {
        let srv = testserver::serve(|_| (200, "not json".into()));
        let c = JsonClient::default();
        let r: Result<serde_json::Value> = c.post(&join_url(&srv.url, "x"), &serde_json::json!({}));
        assert!(matches!(r, Err(Error::MalformedResponse(_))));
    }
}
