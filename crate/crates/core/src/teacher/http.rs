//! Forced-continuation scoring against an OpenAI-style completions endpoint.
//!
//! The prompt is rendered with the answer appended, sent with `echo: true`,
//! `max_tokens: 0` and `logprobs` requested; the trailing tokens that spell
//! the answer are kept and the prompt tokens dropped.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{TeacherProvider, TeacherRequest, TokenLogProbSequence, Variant};
use crate::error::{Error, Result};

pub const DEFAULT_TEMPLATE: &str = "Context: {doc}\nQuestion: {query}\nAnswer: {answer}";
pub const DEFAULT_TEMPLATE_NO_DOC: &str = "Question: {query}\nAnswer: {answer}";

/// Prompt templates for the two context variants. Both must end with
/// `{answer}` so that the answer is a pure suffix of the prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptTemplate {
    pub with_doc: String,
    pub without_doc: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            with_doc: DEFAULT_TEMPLATE.into(),
            without_doc: DEFAULT_TEMPLATE_NO_DOC.into(),
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        for (key, t) in [
            ("with_doc", &self.with_doc),
            ("without_doc", &self.without_doc),
        ] {
            if !t.ends_with("{answer}") || t.matches("{answer}").count() != 1 {
                return Err(Error::config(
                    format!("teacher.template.{key}"),
                    "must contain `{answer}` exactly once, at the end",
                ));
            }
            if !t.contains("{query}") {
                return Err(Error::config(
                    format!("teacher.template.{key}"),
                    "must contain `{query}`",
                ));
            }
        }
        Ok(())
    }

    /// Returns (prompt prefix, full prompt with the answer appended).
    pub fn render(&self, request: &TeacherRequest) -> (String, String) {
        let template = match &request.document {
            Some(_) => &self.with_doc,
            None => &self.without_doc,
        };
        let head = template.trim_end_matches("{answer}");
        let prefix = head
            .replace("{doc}", request.document.as_deref().unwrap_or(""))
            .replace("{query}", &request.query);
        let full = format!("{prefix}{}", request.answer);
        (prefix, full)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientOptions {
    pub model: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
    pub max_in_flight: usize,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            model: None,
            timeout_secs: 60.0,
            max_retries: 4,
            backoff_base_ms: 250,
            backoff_cap_ms: 8_000,
            max_in_flight: 4,
            api_key: None,
        }
    }
}

impl ClientOptions {
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(30))
            .min(self.backoff_cap_ms);
        Duration::from_millis(ms)
    }
}

pub struct HttpTeacher {
    endpoint: String,
    template: PromptTemplate,
    opts: ClientOptions,
    client: Client,
}

impl HttpTeacher {
    pub fn new(
        endpoint: impl Into<String>,
        template: PromptTemplate,
        opts: ClientOptions,
    ) -> Result<Self> {
        template.validate()?;
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(opts.timeout_secs))
            .build()
            .map_err(|e| Error::Network(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            template,
            opts,
            client,
        })
    }

    fn body(&self, request: &TeacherRequest) -> Value {
        let (_, prompt) = self.template.render(request);
        let mut body = json!({
            "prompt": prompt,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 1,
            "temperature": 0.0,
        });
        if let Some(model) = &self.opts.model {
            body["model"] = json!(model);
        }
        if !request.attachment_refs.is_empty() {
            body["attachments"] = json!(request.attachment_refs);
        }
        body
    }

    fn send_once(&self, body: &Value) -> std::result::Result<Value, (bool, Error)> {
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(key) = &self.opts.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| (true, Error::Network(e.to_string())))?;
        let status = resp.status();
        if !status.is_success() {
            let retry = status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS;
            return Err((retry, Error::Network(format!("HTTP {status}"))));
        }
        resp.json::<Value>()
            .map_err(|e| (false, Error::Network(format!("invalid JSON body: {e}"))))
    }

    pub fn fetch(&self, request: &TeacherRequest) -> Result<TokenLogProbSequence> {
        request.validate()?;
        let body = self.body(request);
        let mut attempt = 0;
        let response = loop {
            match self.send_once(&body) {
                Ok(v) => break v,
                Err((true, e)) if attempt < self.opts.max_retries => {
                    let wait = self.opts.backoff(attempt);
                    log::warn!(
                        "teacher request failed ({e}); retry {} in {wait:?}",
                        attempt + 1
                    );
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err((_, e)) => return Err(e),
            }
        };
        extract_answer_logprobs(&response, &request.answer)
    }
}

impl TeacherProvider for HttpTeacher {
    fn logprobs(
        &self,
        _: &str,
        _: Variant,
        request: &TeacherRequest,
    ) -> Result<TokenLogProbSequence> {
        self.fetch(request)
    }

    fn descriptor(&self) -> String {
        format!(
            "http:{}:model={}:tmpl={:?}|{:?}",
            self.endpoint,
            self.opts.model.as_deref().unwrap_or(""),
            self.template.with_doc,
            self.template.without_doc
        )
    }
}

/// Single-shot convenience wrapper.
pub fn fetch_logprobs(
    endpoint: &str,
    request: &TeacherRequest,
    opts: &ClientOptions,
) -> Result<TokenLogProbSequence> {
    HttpTeacher::new(endpoint, PromptTemplate::default(), opts.clone())?.fetch(request)
}

/// Keeps the shortest suffix of the echoed tokens whose concatenation, with
/// leading whitespace dropped, equals the answer.
pub fn extract_answer_logprobs(response: &Value, answer: &str) -> Result<TokenLogProbSequence> {
    let lp = response
        .pointer("/choices/0/logprobs")
        .ok_or(Error::MissingLogprobs)?;
    let tokens = lp
        .get("tokens")
        .and_then(Value::as_array)
        .ok_or(Error::MissingLogprobs)?;
    let values = lp
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or(Error::MissingLogprobs)?;
    if tokens.len() != values.len() {
        return Err(Error::MissingLogprobs);
    }

    let target = answer.trim();
    let mut suffix = String::new();
    let mut start = None;
    for i in (0..tokens.len()).rev() {
        let tok = tokens[i].as_str().ok_or(Error::MissingLogprobs)?;
        suffix.insert_str(0, tok);
        let trimmed = suffix.trim_start();
        if trimmed.len() >= target.len() {
            if trimmed == target {
                start = Some(i);
            }
            break;
        }
    }
    let start = start.ok_or_else(|| Error::TokenAlignment {
        answer: target.to_string(),
        got: suffix.clone(),
    })?;

    let mut out_tokens = Vec::with_capacity(tokens.len() - start);
    let mut out_lps = Vec::with_capacity(tokens.len() - start);
    for i in start..tokens.len() {
        out_tokens.push(tokens[i].as_str().unwrap_or_default().to_string());
        out_lps.push(values[i].as_f64().ok_or(Error::MissingLogprobs)?);
    }
    TokenLogProbSequence::new(out_tokens, out_lps)
}

pub type FetchJob = (String, Variant, TeacherRequest);
pub type FetchResult = (String, Variant, Result<TokenLogProbSequence>);

/// Runs `jobs` against `provider` with at most `max_in_flight` concurrent
/// calls. Results come back in job order.
pub fn fetch_many<P: TeacherProvider + ?Sized>(
    provider: &P,
    jobs: &[FetchJob],
    max_in_flight: usize,
) -> Vec<FetchResult> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<TokenLogProbSequence>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let workers = max_in_flight.max(1).min(jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((id, variant, req)) = jobs.get(i) else {
                    break;
                };
                let res = provider.logprobs(id, variant.clone(), req);
                *slots[i].lock().unwrap() = Some(res);
            });
        }
    });
    jobs.iter()
        .zip(slots)
        .map(|((id, v, _), slot)| {
            let res = slot.into_inner().unwrap().expect("every job is visited");
            (id.clone(), v.clone(), res)
        })
        .collect()
}
