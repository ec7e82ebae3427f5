//! Client for an embeddings HTTP endpoint speaking the common
//! `{"model", "input"}` → `{"data": [{"embedding"}]}` shape.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Embedder, Embedding};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub batch_size: usize,
    pub timeout_secs: u64,
    pub retries: usize,
    pub expected_dim: usize,
    pub concurrency: usize,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8080/v1/embeddings".into(),
            model: "text-embedding".into(),
            batch_size: 32,
            timeout_secs: 60,
            retries: 3,
            expected_dim: 1024,
            concurrency: 4,
            api_key: None,
        }
    }
}

fn parse_url(endpoint: &str) -> Result<reqwest::Url> {
    let url = reqwest::Url::parse(endpoint).map_err(|e| Error::Config(format!("endpoint `{endpoint}`: {e}")))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none_or(str::is_empty) {
        return Err(Error::Config(format!("endpoint `{endpoint}` must be an http(s) URL with a host")));
    }
    Ok(url)
}

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct Response {
    data: Vec<Item>,
}

#[derive(Deserialize)]
struct Item {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

enum Failure {
    /// Worth another attempt.
    Transient(String),
    Fatal(Error),
}

pub struct RemoteEmbedder {
    config: RemoteConfig,
    url: reqwest::Url,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig) -> Result<RemoteEmbedder> {
        if config.batch_size == 0 {
            return Err(Error::Config("remote batch_size must be at least 1".into()));
        }
        if config.expected_dim == 0 {
            return Err(Error::Config("remote expected_dim must be positive".into()));
        }
        let url = parse_url(&config.endpoint)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(RemoteEmbedder { config, url, client })
    }

    fn post(&self, body: Vec<u8>) -> std::result::Result<(u16, Vec<u8>), String> {
        let mut req = self
            .client
            .post(self.url.clone())
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .header(reqwest::header::ACCEPT, "application/json")
            .body(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let payload = resp.bytes().map_err(|e| e.to_string())?;
        Ok((status, payload.to_vec()))
    }

    fn embed_batch(&self, texts: &[&str]) -> std::result::Result<Vec<Embedding>, Failure> {
        let body = serde_json::to_vec(&Request {
            model: &self.config.model,
            input: texts,
        })
        .map_err(|e| Failure::Fatal(e.into()))?;
        let (status, payload) = self.post(body).map_err(Failure::Transient)?;
        if status == 429 || status >= 500 {
            return Err(Failure::Transient(format!("server returned {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Failure::Fatal(Error::Embed(format!(
                "server returned {status}: {}",
                String::from_utf8_lossy(&payload).chars().take(200).collect::<String>()
            ))));
        }
        let resp: Response = serde_json::from_slice(&payload)
            .map_err(|e| Failure::Fatal(Error::Embed(format!("malformed response: {e}"))))?;
        if resp.data.len() != texts.len() {
            return Err(Failure::Fatal(Error::Embed(format!(
                "{} embeddings for {} inputs",
                resp.data.len(),
                texts.len()
            ))));
        }
        let mut slots: Vec<Option<Embedding>> = vec![None; texts.len()];
        for (pos, item) in resp.data.into_iter().enumerate() {
            if item.embedding.len() != self.config.expected_dim {
                return Err(Failure::Fatal(Error::Contract {
                    expected: self.config.expected_dim,
                    got: item.embedding.len(),
                }));
            }
            let at = item.index.unwrap_or(pos);
            match slots.get_mut(at) {
                Some(slot @ None) => *slot = Some(Embedding::from_unnormalized(&item.embedding)),
                _ => {
                    return Err(Failure::Fatal(Error::Embed(format!("bad or repeated index {at}"))));
                }
            }
        }
        Ok(slots.into_iter().map(|s| s.expect("every slot filled")).collect())
    }

    fn embed_batch_with_retries(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 << (attempt - 1).min(6)));
            }
            match self.embed_batch(texts) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    log::warn!("embedding request attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(Error::Embed(format!(
            "giving up after {} attempts: {last}",
            self.config.retries + 1
        )))
    }
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.config.expected_dim
    }

    fn id(&self) -> String {
        format!("remote:{}", self.config.model)
    }

    /// Splits into batches and sends up to `concurrency` at a time; the
    /// output keeps input order.
    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        let batches: Vec<&[&str]> = texts.chunks(self.config.batch_size).collect();
        let results: Vec<Mutex<Option<Result<Vec<Embedding>>>>> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.config.concurrency.clamp(1, batches.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let b = next.fetch_add(1, Ordering::SeqCst);
                    if b >= batches.len() {
                        break;
                    }
                    let r = self.embed_batch_with_retries(batches[b]);
                    let failed = r.is_err();
                    *results[b].lock().expect("unpoisoned") = Some(r);
                    if failed {
                        next.store(batches.len(), Ordering::SeqCst);
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(texts.len());
        for slot in results {
            match slot.into_inner().expect("unpoisoned") {
                Some(Ok(v)) => out.extend(v),
                Some(Err(e)) => return Err(e),
                None => return Err(Error::Embed("batch abandoned after an earlier failure".into())),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_parsing() {
        let u = parse_url("http://localhost:9000/v1/embeddings").unwrap();
        assert_eq!(u.port(), Some(9000));
        assert_eq!(u.path(), "/v1/embeddings");
        assert!(parse_url("https://h/x").is_ok());
        assert!(parse_url("ftp://h/x").is_err());
        assert!(parse_url("not a url").is_err());
    }

    #[test]
    fn zero_batch_rejected() {
        let cfg = RemoteConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(RemoteEmbedder::new(cfg).is_err());
    }
}
