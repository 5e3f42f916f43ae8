//! Embedding vectors and the embedder contract.
//!
//! [`HashingEmbedder`] is the deterministic default: each whitespace token of
//! the normalized text is hashed twice (SHA-256 under two domain tags), once
//! to pick a bucket and once to pick a sign; signed counts are accumulated and
//! L2-normalized. [`RemoteEmbedder`] speaks a small JSON-over-HTTP protocol:
//! `POST {endpoint}/embed {"texts": [...]}` → `{"vectors": [[f32; dim], ...]}`.

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::chunking::normalize;
use crate::error::{Error, Result};

pub const DEFAULT_DIMENSION: usize = 384;
const NORM_TOLERANCE: f64 = 1e-5;

/// A unit-norm vector of finite f32 components. Cheap to clone.
#[derive(Clone, PartialEq)]
pub struct Embedding(Arc<[f32]>);

impl Embedding {
    /// Wrap values that must already be unit-norm and finite.
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("embedding has non-finite components".into()));
        }
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::InvalidInput(format!("embedding norm {norm} is not 1")));
        }
        Ok(Self(values.into()))
    }

    /// L2-normalize arbitrary finite values. A zero vector becomes e₀.
    pub fn normalized(mut values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("embedding has non-finite components".into()));
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            values.iter_mut().for_each(|v| *v = 0.0);
            values[0] = 1.0;
        } else {
            values.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
        }
        Ok(Self(values.into()))
    }

    pub fn basis(dimension: usize) -> Self {
        let mut v = vec![0.0; dimension];
        v[0] = 1.0;
        Self(v.into())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Embedding) -> f32 {
        dot(&self.0, &other.0)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 4 != 0 {
            return Err(Error::InvalidInput("embedding byte length not a multiple of 4".into()));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect::<Vec<_>>();
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("invalid stored embedding".into()));
        }
        Ok(Self(values.into()))
    }
}

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Embedding(dim={}, ", self.0.len())?;
        f.debug_list().entries(self.0.iter().take(4)).finish()?;
        f.write_str("..)")
    }
}

impl Serialize for Embedding {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        serde_bytes::Bytes::new(&self.to_le_bytes()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let bytes = serde_bytes::ByteBuf::deserialize(d)?;
        Embedding::from_le_bytes(&bytes).map_err(serde::de::Error::custom)
    }
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

/// Dot product with eight independent accumulators so it vectorizes.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let (ca, ra) = a.split_at(a.len() - a.len() % 8);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(8).zip(cb.chunks_exact(8)) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut sum = acc.iter().sum::<f32>();
    for (x, y) in ra.iter().zip(rb) {
        sum += x * y;
    }
    sum
}

pub trait Embedder: Send + Sync + fmt::Debug {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<Embedding>;

    /// Element-wise identical to calling [`Embedder::embed`] on each text.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
}

const BUCKET_TAG: &[u8] = b"tempovec/bucket\0";
const SIGN_TAG: &[u8] = b"tempovec/sign\0";

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        Ok(Self { dimension })
    }

    /// (bucket, sign) for one token.
    pub fn token_feature(&self, token: &str) -> (usize, f32) {
        let bucket_hash = Sha256::new()
            .chain_update(BUCKET_TAG)
            .chain_update(token.as_bytes())
            .finalize();
        let sign_hash = Sha256::new()
            .chain_update(SIGN_TAG)
            .chain_update(token.as_bytes())
            .finalize();
        let bucket = u64::from_le_bytes(bucket_hash[..8].try_into().unwrap()) % self.dimension as u64;
        let sign = if sign_hash[0] & 1 == 0 { 1.0 } else { -1.0 };
        (bucket as usize, sign)
    }
}

impl Embedder for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let normalized = normalize(text);
        let mut counts = vec![0.0f32; self.dimension];
        for token in normalized.split(' ').filter(|t| !t.is_empty()) {
            let (bucket, sign) = self.token_feature(token);
            counts[bucket] += sign;
        }
        Embedding::normalized(counts)
    }
}

/// Counts semaphore bounding in-flight remote requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock();
        while *used >= self.limit {
            self.freed.wait(&mut used);
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock() -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

#[derive(Debug)]
pub struct RemoteEmbedder {
    url: String,
    dimension: usize,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, dimension: usize, timeout: Duration, max_in_flight: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            url: format!("{}/embed", endpoint.trim_end_matches('/')),
            dimension,
            client,
            in_flight: InFlight {
                limit: max_in_flight.max(1),
                used: Mutex::new(0),
                freed: Condvar::new(),
            },
        })
    }

    fn request(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        let _slot = self.in_flight.acquire();
        let resp = self
            .client
            .post(&self.url)
            .json(&EmbedRequest { texts })
            .send()
            .map_err(|e| Error::Embedding {
                retryable: true,
                message: format!("{}: {e}", self.url),
            })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::Embedding {
                retryable: status.is_server_error() || status.as_u16() == 429,
                message: format!("{} returned {status}", self.url),
            });
        }
        let body: EmbedResponse = resp.json().map_err(|e| Error::Embedding {
            retryable: false,
            message: format!("malformed response from {}: {e}", self.url),
        })?;
        if body.vectors.len() != texts.len() {
            return Err(Error::Embedding {
                retryable: false,
                message: format!("asked for {} vectors, got {}", texts.len(), body.vectors.len()),
            });
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dimension {
                    return Err(Error::Embedding {
                        retryable: false,
                        message: format!("expected dimension {}, got {}", self.dimension, v.len()),
                    });
                }
                Embedding::normalized(v).map_err(|e| Error::Embedding {
                    retryable: false,
                    message: e.to_string(),
                })
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let mut v = self.request(std::slice::from_ref(&text.to_owned()))?;
        Ok(v.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        self.request(texts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    Deterministic,
    Remote,
}

#[derive(Debug, Clone)]
pub struct EmbedderConfig {
    pub dimension: usize,
    pub provider: Provider,
    pub remote_endpoint: Option<String>,
    pub remote_timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            provider: Provider::Deterministic,
            remote_endpoint: None,
            remote_timeout: Duration::from_secs(30),
            max_in_flight: 4,
        }
    }
}

impl EmbedderConfig {
    pub fn build(&self) -> Result<Arc<dyn Embedder>> {
        match self.provider {
            Provider::Deterministic => Ok(Arc::new(HashingEmbedder::new(self.dimension)?)),
            Provider::Remote => {
                let endpoint = self
                    .remote_endpoint
                    .as_deref()
                    .ok_or_else(|| Error::Config("remote embedder requires an endpoint".into()))?;
                Ok(Arc::new(RemoteEmbedder::new(
                    endpoint,
                    self.dimension,
                    self.remote_timeout,
                    self.max_in_flight,
                )?))
            }
        }
    }
}
