//! Access to external model capabilities: chat completion, embeddings and
//! entailment judging, behind a write-once response cache.

mod cache;
mod http;
pub mod mock;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cache::{CacheRequest, CachedResponse, ResponseCache};
pub use http::{api_key_var, parse_chat_response, parse_embedding_response, HttpTransport};
pub use mock::MockTransport;

use crate::error::{Error, Result};
use crate::prompts::{PromptRequest, PromptRole, PromptTemplate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Chat,
    Embedding,
    Entailment,
    Mock,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Chat => "chat",
            Self::Embedding => "embedding",
            Self::Entailment => "entailment",
            Self::Mock => "mock",
        }
    }
}

fn default_temperature() -> f64 {
    0.3
}
fn default_max_output_tokens() -> u32 {
    1024
}
fn default_timeout() -> u64 {
    120
}
fn default_parallel() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub backend_id: String,
    pub kind: BackendKind,
    /// Ignored for the mock kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl BackendProfile {
    pub fn mock(backend_id: impl Into<String>) -> Self {
        Self {
            backend_id: backend_id.into(),
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: "mock".into(),
            temperature: default_temperature(),
            max_output_tokens: default_max_output_tokens(),
            request_timeout_secs: default_timeout(),
            max_parallel: default_parallel(),
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.backend_id;
        if id.is_empty() {
            return Err(Error::Config("backend_id must not be empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("backend {id}: temperature must be >= 0")));
        }
        if self.max_parallel == 0 {
            return Err(Error::Config(format!("backend {id}: max_parallel must be >= 1")));
        }
        if self.kind != BackendKind::Mock && self.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(Error::Config(format!("backend {id}: endpoint is required")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransportError {
    pub message: String,
    pub retryable: bool,
}

/// One network (or mock) round trip, without caching or retries.
pub trait Transport: Send + Sync {
    fn chat(&self, profile: &BackendProfile, request: &PromptRequest) -> Result<String, TransportError>;
    fn embed(&self, profile: &BackendProfile, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError>;
    /// Raw judge output; parsed by [`parse_verdict`].
    fn entail(&self, profile: &BackendProfile, claim: &str, summary: &str) -> Result<String, TransportError>;
}

#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let exp = self.base_delay.saturating_mul(1u32 << attempt.min(16)).min(self.max_delay);
        let jitter = rand::thread_rng().gen_range(0.5..=1.0);
        exp.mul_f64(jitter)
    }
}

#[derive(Debug, Default)]
struct Semaphore {
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn acquire(&self, limit: usize) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("semaphore poisoned");
        while *n >= limit {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("semaphore poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

/// Turn a judge response into a binary verdict. Numbers are probabilities
/// thresholded at 0.5; labels and JSON objects with `label`, `score` or
/// `entailed` fields are also understood.
pub fn parse_verdict(raw: &str) -> Result<bool> {
    const THRESHOLD: f64 = 0.5;
    let text = raw.trim();
    if let Ok(p) = text.parse::<f64>() {
        if (0.0..=1.0).contains(&p) {
            return Ok(p >= THRESHOLD);
        }
        return Err(Error::MalformedVerdict(raw.to_string()));
    }
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(text) {
        if let Some(obj) = v.as_object() {
            for field in ["entailed", "label", "score", "probability", "prob"] {
                match obj.get(field) {
                    Some(serde_json::Value::Bool(b)) => return Ok(*b),
                    Some(serde_json::Value::Number(n)) => return parse_verdict(&n.to_string()),
                    Some(serde_json::Value::String(s)) => return parse_verdict(s),
                    _ => {}
                }
            }
        }
        return Err(Error::MalformedVerdict(raw.to_string()));
    }
    let word = text
        .trim_matches(|c: char| !c.is_ascii_alphanumeric())
        .to_ascii_lowercase();
    match word.as_str() {
        "1" | "yes" | "true" | "entailed" | "entailment" | "supported" => Ok(true),
        "0" | "no" | "false" | "not entailed" | "not_entailed" | "contradiction" | "neutral"
        | "unsupported" | "not supported" => Ok(false),
        _ => Err(Error::MalformedVerdict(raw.to_string())),
    }
}

/// Thread-safe facade over the transports.
pub struct Gateway {
    cache: Option<ResponseCache>,
    remote: Box<dyn Transport>,
    mock: MockTransport,
    retry: RetryPolicy,
    calls: AtomicUsize,
    limits: Mutex<HashMap<String, Arc<Semaphore>>>,
    entail_prompt: PromptTemplate,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("cache", &self.cache)
            .field("retry", &self.retry)
            .field("calls", &self.calls)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(cache: Option<ResponseCache>) -> Self {
        Self {
            cache,
            remote: Box::new(HttpTransport::new()),
            mock: MockTransport,
            retry: RetryPolicy::default(),
            calls: AtomicUsize::new(0),
            limits: Mutex::new(HashMap::new()),
            entail_prompt: PromptTemplate::default_for(PromptRole::Entail),
        }
    }

    /// Replace the network transport (used for non-mock kinds).
    pub fn with_transport(mut self, transport: Box<dyn Transport>) -> Self {
        self.remote = transport;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Template used when a chat backend acts as entailment judge.
    pub fn with_entail_prompt(mut self, template: PromptTemplate) -> Self {
        self.entail_prompt = template;
        self
    }

    /// Transport round trips performed so far (cache hits excluded).
    pub fn transport_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn transport(&self, profile: &BackendProfile) -> &dyn Transport {
        match profile.kind {
            BackendKind::Mock => &self.mock,
            _ => self.remote.as_ref(),
        }
    }

    fn semaphore(&self, profile: &BackendProfile) -> Arc<Semaphore> {
        self.limits
            .lock()
            .expect("limit map poisoned")
            .entry(profile.backend_id.clone())
            .or_default()
            .clone()
    }

    fn call<T>(
        &self,
        profile: &BackendProfile,
        key: &str,
        mut f: impl FnMut() -> Result<T, TransportError>,
    ) -> Result<T> {
        let sem = self.semaphore(profile);
        let _permit = sem.acquire(profile.max_parallel.max(1));
        let mut last = None;
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            self.calls.fetch_add(1, Ordering::SeqCst);
            match f() {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("backend {} attempt {}: {}", profile.backend_id, attempt + 1, e.message);
                    let retryable = e.retryable;
                    last = Some(e);
                    if !retryable {
                        break;
                    }
                }
            }
        }
        let e = last.expect("at least one attempt");
        Err(Error::Backend {
            key: key.to_string(),
            message: e.message,
        })
    }

    fn cache_request(&self, profile: &BackendProfile, role: &str, prompt: String, tag: &str) -> CacheRequest {
        CacheRequest {
            role: role.to_string(),
            backend_kind: profile.kind.name().to_string(),
            model_name: profile.model_name.clone(),
            prompt,
            temperature: profile.temperature,
            seed: profile.seed,
            replicate_tag: tag.to_string(),
        }
    }

    fn cached(&self, key: &str) -> Result<Option<CachedResponse>> {
        match &self.cache {
            Some(c) => c.get(key),
            None => Ok(None),
        }
    }

    fn store(&self, request: &CacheRequest, response: CachedResponse) -> Result<CachedResponse> {
        match &self.cache {
            Some(c) => c.put(request, response),
            None => Ok(response),
        }
    }

    pub fn complete_chat(
        &self,
        profile: &BackendProfile,
        request: &PromptRequest,
        replicate_tag: &str,
    ) -> Result<String> {
        if !matches!(profile.kind, BackendKind::Chat | BackendKind::Mock) {
            return Err(Error::Contract(format!(
                "backend {} ({}) cannot complete chat prompts",
                profile.backend_id,
                profile.kind.name()
            )));
        }
        let creq = self.cache_request(profile, request.role.name(), request.rendered.clone(), replicate_tag);
        let key = creq.key();
        if let Some(CachedResponse::Text(t)) = self.cached(&key)? {
            return Ok(t);
        }
        let text = self.call(profile, &key, || self.transport(profile).chat(profile, request))?;
        if text.trim().is_empty() {
            return Err(Error::EmptyOutput { key });
        }
        match self.store(&creq, CachedResponse::Text(text))? {
            CachedResponse::Text(t) => Ok(t),
            CachedResponse::Vector(_) => Err(Error::Backend {
                key,
                message: "cache holds a vector for a chat request".into(),
            }),
        }
    }

    pub fn embed_texts(&self, profile: &BackendProfile, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if !matches!(profile.kind, BackendKind::Embedding | BackendKind::Mock) {
            return Err(Error::Contract(format!(
                "backend {} ({}) cannot embed text",
                profile.backend_id,
                profile.kind.name()
            )));
        }
        if texts.is_empty() {
            return Err(Error::Contract("embed_texts called with no texts".into()));
        }
        let requests: Vec<CacheRequest> = texts
            .iter()
            .map(|t| self.cache_request(profile, "embed", t.clone(), ""))
            .collect();
        let mut out: Vec<Option<Vec<f64>>> = Vec::with_capacity(texts.len());
        for r in &requests {
            out.push(match self.cached(&r.key())? {
                Some(CachedResponse::Vector(v)) => Some(v),
                _ => None,
            });
        }
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let key = requests[missing[0]].key();
            let vectors = self.call(profile, &key, || self.transport(profile).embed(profile, &batch))?;
            if vectors.len() != batch.len() {
                return Err(Error::Backend {
                    key,
                    message: format!("{} vectors returned for {} texts", vectors.len(), batch.len()),
                });
            }
            for (&i, v) in missing.iter().zip(vectors) {
                out[i] = match self.store(&requests[i], CachedResponse::Vector(v))? {
                    CachedResponse::Vector(v) => Some(v),
                    CachedResponse::Text(_) => None,
                };
            }
        }
        let out: Vec<Vec<f64>> = out.into_iter().map(|v| v.unwrap_or_default()).collect();
        let dim = out[0].len();
        if dim == 0 || out.iter().any(|v| v.len() != dim) {
            return Err(Error::Backend {
                key: requests[0].key(),
                message: "embedding dimensions differ within a batch".into(),
            });
        }
        Ok(out)
    }

    pub fn judge_entailment(&self, profile: &BackendProfile, claim: &str, summary: &str) -> Result<bool> {
        if claim.trim().is_empty() || summary.trim().is_empty() {
            return Err(Error::Contract("entailment needs a non-empty claim and summary".into()));
        }
        let chat_request = match profile.kind {
            BackendKind::Chat => Some(
                self.entail_prompt
                    .render(&[("claim", claim.to_string()), ("summary", summary.to_string())])?,
            ),
            BackendKind::Entailment | BackendKind::Mock => None,
            BackendKind::Embedding => {
                return Err(Error::Contract(format!(
                    "backend {} (embedding) cannot judge entailment",
                    profile.backend_id
                )))
            }
        };
        let prompt = match &chat_request {
            Some(r) => r.rendered.clone(),
            None => serde_json::json!({"claim": claim, "summary": summary}).to_string(),
        };
        let creq = self.cache_request(profile, PromptRole::Entail.name(), prompt, "");
        let key = creq.key();
        if let Some(CachedResponse::Text(t)) = self.cached(&key)? {
            return parse_verdict(&t);
        }
        let raw = self.call(profile, &key, || match &chat_request {
            Some(r) => self.transport(profile).chat(profile, r),
            None => self.transport(profile).entail(profile, claim, summary),
        })?;
        let verdict = parse_verdict(&raw)?;
        self.store(&creq, CachedResponse::Text(raw))?;
        Ok(verdict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::PromptTemplate;

    struct Failing {
        retryable: bool,
    }

    impl Transport for Failing {
        fn chat(&self, _: &BackendProfile, _: &PromptRequest) -> Result<String, TransportError> {
            Err(TransportError { message: "down".into(), retryable: self.retryable })
        }
        fn embed(&self, _: &BackendProfile, _: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
            Ok(vec![vec![1.0], vec![1.0, 2.0]])
        }
        fn entail(&self, _: &BackendProfile, _: &str, _: &str) -> Result<String, TransportError> {
            Ok("maybe".into())
        }
    }

    fn chat_profile() -> BackendProfile {
        BackendProfile {
            kind: BackendKind::Chat,
            endpoint: Some("http://127.0.0.1:9".into()),
            ..BackendProfile::mock("remote")
        }
    }

    fn fast() -> RetryPolicy {
        RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1), max_delay: Duration::from_millis(2) }
    }

    fn summarize(words: u32) -> PromptRequest {
        PromptTemplate::default_for(PromptRole::Summarize)
            .render(&[
                ("document", "C1F1 a b c d e\nC2F2 f g h i j".into()),
                ("target_words", words.to_string()),
            ])
            .unwrap()
    }

    #[test]
    fn verdict_parsing() {
        assert!(parse_verdict("0.73").unwrap());
        assert!(parse_verdict("0.5").unwrap());
        assert!(!parse_verdict("0.49").unwrap());
        assert!(parse_verdict("Yes.").unwrap());
        assert!(!parse_verdict(" 0\n").unwrap());
        assert!(parse_verdict(r#"{"label": "entailed"}"#).unwrap());
        assert!(!parse_verdict(r#"{"score": 0.1}"#).unwrap());
        assert!(matches!(parse_verdict("perhaps"), Err(Error::MalformedVerdict(_))));
        assert!(parse_verdict("1.7").is_err());
    }

    #[test]
    fn cache_round_trip_skips_transport() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(Some(ResponseCache::open(dir.path()).unwrap()));
        let p = BackendProfile::mock("m");
        let a = gw.complete_chat(&p, &summarize(6), "r0").unwrap();
        assert_eq!(gw.transport_calls(), 1);
        let b = gw.complete_chat(&p, &summarize(6), "r0").unwrap();
        assert_eq!(a, b);
        assert_eq!(gw.transport_calls(), 1);
        gw.complete_chat(&p, &summarize(6), "r1").unwrap();
        assert_eq!(gw.transport_calls(), 2);
    }

    #[test]
    fn retries_then_backend_error() {
        let gw = Gateway::new(None).with_transport(Box::new(Failing { retryable: true })).with_retry(fast());
        let err = gw.complete_chat(&chat_profile(), &summarize(6), "r0").unwrap_err();
        assert!(matches!(err, Error::Backend { .. }));
        assert_eq!(gw.transport_calls(), 3);

        let gw = Gateway::new(None).with_transport(Box::new(Failing { retryable: false })).with_retry(fast());
        gw.complete_chat(&chat_profile(), &summarize(6), "r0").unwrap_err();
        assert_eq!(gw.transport_calls(), 1);
    }

    #[test]
    fn unreachable_endpoint_is_a_backend_error() {
        let gw = Gateway::new(None).with_retry(fast());
        let err = gw.complete_chat(&chat_profile(), &summarize(6), "r0").unwrap_err();
        assert!(matches!(err, Error::Backend { .. }), "{err}");
        assert_eq!(gw.transport_calls(), 3);
    }

    #[test]
    fn embedding_contract() {
        let gw = Gateway::new(None);
        let p = BackendProfile::mock("m");
        let v = gw.embed_texts(&p, &["q1".into(), "q1".into()]).unwrap();
        assert_eq!(v[0], v[1]);
        assert!(gw.embed_texts(&p, &[]).is_err());

        let mut remote = chat_profile();
        remote.kind = BackendKind::Embedding;
        let gw = Gateway::new(None).with_transport(Box::new(Failing { retryable: false }));
        assert!(matches!(gw.embed_texts(&remote, &["a".into(), "b".into()]), Err(Error::Backend { .. })));
    }

    #[test]
    fn entailment_mock_and_malformed() {
        let gw = Gateway::new(None);
        let p = BackendProfile::mock("m");
        assert!(gw.judge_entailment(&p, "C2F2 x", "has C2F2 in it").unwrap());
        assert!(!gw.judge_entailment(&p, "C9F9 x", "has C2F2 in it").unwrap());

        let mut judge = chat_profile();
        judge.kind = BackendKind::Entailment;
        let gw = Gateway::new(None).with_transport(Box::new(Failing { retryable: false }));
        assert!(matches!(gw.judge_entailment(&judge, "a", "b"), Err(Error::MalformedVerdict(_))));
    }

    #[test]
    fn profile_validation() {
        assert!(BackendProfile::mock("m").validate().is_ok());
        let mut p = chat_profile();
        p.endpoint = None;
        assert!(p.validate().is_err());
        let mut p = BackendProfile::mock("m");
        p.max_parallel = 0;
        assert!(p.validate().is_err());
    }
}
