//! Completion-API client with live, record and replay transports.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::frontend::{check_expression, MethodRecord, SourceUnit};
use crate::harness::{Condition, PostconditionSet};

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_ATTEMPTS: u32 = 3;
pub const DEFAULT_BACKOFF_MS: u64 = 500;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClientError {
    #[error("http error {0}")]
    Http(u16),
    #[error("request timed out")]
    Timeout,
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("environment variable {0} is not set")]
    AuthMissing(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("transcript io: {0}")]
    Io(String),
    #[error("client misconfigured: {0}")]
    Config(String),
}

impl ClientError {
    fn retryable(&self) -> bool {
        matches!(self, ClientError::Http(s) if *s >= 500) || *self == ClientError::Timeout
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub request_id: String,
    pub system: String,
    pub user: String,
    pub max_output_chars: usize,
    pub temperature_hint: f64,
}

/// SHA-256 over the JSON array `[system, user]`, hex encoded.
pub fn request_id(system: &str, user: &str) -> String {
    let canonical = serde_json::to_string(&[system, user]).expect("strings serialize");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl PromptRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        let system = system.into();
        let user = user.into();
        PromptRequest {
            request_id: request_id(&system, &user),
            system,
            user,
            max_output_chars: 4096,
            temperature_hint: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransportMode {
    Live,
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transport {
    pub mode: TransportMode,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub transcript_path: Option<PathBuf>,
    #[serde(default = "default_auth_var")]
    pub auth_env_var: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_request_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_auth_var() -> String {
    "POSTCOND_API_KEY".into()
}
fn default_request_timeout() -> u64 {
    60_000
}
fn default_in_flight() -> usize {
    DEFAULT_MAX_IN_FLIGHT
}

impl Transport {
    pub fn replay(transcript: impl Into<PathBuf>) -> Self {
        Transport {
            mode: TransportMode::Replay,
            endpoint: None,
            transcript_path: Some(transcript.into()),
            auth_env_var: default_auth_var(),
            model: None,
            timeout_ms: default_request_timeout(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

/// Anything that can answer a prompt.
pub trait CompletionClient: Send + Sync {
    fn complete(&self, req: &PromptRequest) -> Result<String, ClientError>;
}

/// Wire-level POST of a JSON body; returns the raw response body.
pub trait HttpBackend: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        auth: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<String, ClientError>;
}

pub struct UreqBackend;

impl HttpBackend for UreqBackend {
    fn post_json(
        &self,
        url: &str,
        auth: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<String, ClientError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent
            .post(url)
            .header("Authorization", &format!("Bearer {auth}"))
            .send_json(body)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => ClientError::Timeout,
                other => ClientError::Transport(other.to_string()),
            })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ClientError::Http(status));
        }
        resp.body_mut()
            .read_to_string()
            .map_err(|e| ClientError::Transport(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct TranscriptEntry {
    id: String,
    request: serde_json::Value,
    response: String,
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) {
        let mut free = self.free.lock().expect("semaphore lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore wait");
        }
        *free -= 1;
    }

    fn release(&self) {
        *self.free.lock().expect("semaphore lock") += 1;
        self.cv.notify_one();
    }
}

pub struct Client {
    transport: Transport,
    backend: Box<dyn HttpBackend>,
    replay: BTreeMap<String, String>,
    appender: Mutex<Option<File>>,
    network_calls: AtomicUsize,
    slots: Semaphore,
}

impl Client {
    pub fn new(transport: Transport) -> Result<Self, ClientError> {
        Self::with_backend(transport, Box::new(UreqBackend))
    }

    pub fn with_backend(transport: Transport, backend: Box<dyn HttpBackend>) -> Result<Self, ClientError> {
        let mut replay = BTreeMap::new();
        let mut appender = None;
        match transport.mode {
            TransportMode::Replay => {
                let path = transport
                    .transcript_path
                    .as_ref()
                    .ok_or_else(|| ClientError::Config("REPLAY requires transcript_path".into()))?;
                let text = std::fs::read_to_string(path).map_err(|e| ClientError::Io(format!("{}: {e}", path.display())))?;
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: TranscriptEntry = serde_json::from_str(line)
                        .map_err(|e| ClientError::Io(format!("{} line {}: {e}", path.display(), i + 1)))?;
                    replay.insert(entry.id, entry.response);
                }
            }
            TransportMode::Record | TransportMode::Live => {
                if transport.endpoint.is_none() {
                    return Err(ClientError::Config("LIVE and RECORD require an endpoint".into()));
                }
                if transport.mode == TransportMode::Record {
                    let path = transport
                        .transcript_path
                        .as_ref()
                        .ok_or_else(|| ClientError::Config("RECORD requires transcript_path".into()))?;
                    let file = OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(path)
                        .map_err(|e| ClientError::Io(e.to_string()))?;
                    appender = Some(file);
                }
            }
        }
        let slots = transport.max_in_flight.max(1);
        Ok(Client {
            transport,
            backend,
            replay,
            appender: Mutex::new(appender),
            network_calls: AtomicUsize::new(0),
            slots: Semaphore {
                free: Mutex::new(slots),
                cv: Condvar::new(),
            },
        })
    }

    /// Number of requests handed to the HTTP backend so far.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn transport(&self) -> &Transport {
        &self.transport
    }

    fn live(&self, req: &PromptRequest) -> Result<String, ClientError> {
        let auth = std::env::var(&self.transport.auth_env_var)
            .ok()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| ClientError::AuthMissing(self.transport.auth_env_var.clone()))?;
        let endpoint = self.transport.endpoint.as_deref().unwrap_or_default();
        let mut body = json!({
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature_hint,
        });
        if let Some(model) = &self.transport.model {
            body["model"] = json!(model);
        }
        self.slots.acquire();
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let raw = self
            .backend
            .post_json(endpoint, &auth, &body, Duration::from_millis(self.transport.timeout_ms));
        self.slots.release();
        let text = extract_completion(&raw?)?;
        Ok(truncate_chars(&text, req.max_output_chars))
    }

    fn record(&self, req: &PromptRequest, response: &str) -> Result<(), ClientError> {
        let entry = TranscriptEntry {
            id: req.request_id.clone(),
            request: json!({
                "max_output_chars": req.max_output_chars,
                "system": req.system,
                "temperature_hint": req.temperature_hint,
                "user": req.user,
            }),
            response: response.to_string(),
        };
        let mut line = serde_json::to_string(&entry).map_err(|e| ClientError::Io(e.to_string()))?;
        line.push('\n');
        let mut guard = self.appender.lock().expect("appender lock");
        let file = guard.as_mut().expect("RECORD mode has an appender");
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| ClientError::Io(e.to_string()))
    }
}

impl CompletionClient for Client {
    fn complete(&self, req: &PromptRequest) -> Result<String, ClientError> {
        match self.transport.mode {
            TransportMode::Replay => self
                .replay
                .get(&req.request_id)
                .cloned()
                .ok_or_else(|| ClientError::ReplayMiss(req.request_id.clone())),
            TransportMode::Live => self.live(req),
            TransportMode::Record => {
                let response = self.live(req)?;
                self.record(req, &response)?;
                Ok(response)
            }
        }
    }
}

fn truncate_chars(text: &str, max: usize) -> String {
    match text.char_indices().nth(max) {
        Some((cut, _)) => text[..cut].to_string(),
        None => text.to_string(),
    }
}

/// Accepts chat-completion shaped bodies and plain `{"response": ...}` bodies.
fn extract_completion(raw: &str) -> Result<String, ClientError> {
    let v: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| ClientError::Transport(format!("bad response body: {e}")))?;
    v.pointer("/choices/0/message/content")
        .or_else(|| v.get("response"))
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| ClientError::Transport("response body has no completion text".into()))
}

/// Retries 5xx and timeouts with doubling backoff; `sleep` is injectable for tests.
pub fn complete_with_retry_using(
    client: &dyn CompletionClient,
    req: &PromptRequest,
    attempts: u32,
    backoff_ms: u64,
    sleep: &dyn Fn(Duration),
) -> Result<String, ClientError> {
    let attempts = attempts.max(1);
    let mut delay = backoff_ms;
    let mut attempt = 1;
    loop {
        match client.complete(req) {
            Ok(text) => return Ok(text),
            Err(e) if e.retryable() && attempt < attempts => {
                tracing::warn!(attempt, error = %e, "retrying completion");
                sleep(Duration::from_millis(delay));
                delay = delay.saturating_mul(2);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

pub fn complete_with_retry(
    client: &dyn CompletionClient,
    req: &PromptRequest,
    attempts: u32,
    backoff_ms: u64,
) -> Result<String, ClientError> {
    complete_with_retry_using(client, req, attempts, backoff_ms, &std::thread::sleep)
}

const DRAFT_SYSTEM: &str = "You write postconditions for a method. Each postcondition is one boolean \
expression over `result`, the parameters, and `old(expr)` for values captured at method entry. \
It must hold for the original method and fail for the defective variants shown as diffs. \
Put each postcondition in its own fenced code block.";

pub fn draft_prompt(unit: &SourceUnit, method: &MethodRecord, mutant_diffs: &[String]) -> PromptRequest {
    let mut user = String::new();
    user.push_str("Method:\n");
    user.push_str(&unit.text);
    if !unit.text.ends_with('\n') {
        user.push('\n');
    }
    user.push_str(&format!("\nTarget method: {}\n", method.signature));
    for (i, diff) in mutant_diffs.iter().enumerate() {
        user.push_str(&format!("\nDefective variant {}:\n{diff}", i + 1));
        if !diff.ends_with('\n') {
            user.push('\n');
        }
    }
    PromptRequest::new(DRAFT_SYSTEM, user)
}

/// Splits the text of every fenced block out of a response. An unclosed
/// fence yields an error entry.
fn fenced_blocks(response: &str) -> Vec<Result<String, String>> {
    let mut out = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in response.lines() {
        let trimmed = line.trim_start();
        if trimmed.starts_with("```") {
            match current.take() {
                Some(lines) => out.push(Ok(lines.join("\n"))),
                None => current = Some(Vec::new()),
            }
        } else if let Some(lines) = current.as_mut() {
            lines.push(line);
        }
    }
    if current.is_some() {
        out.push(Err("unterminated fenced block".to_string()));
    }
    out
}

/// Arguments of every `old(...)` occurrence, with balanced parentheses.
fn old_arguments(cond: &str) -> Result<Vec<String>, String> {
    let mut found: Vec<String> = Vec::new();
    let bytes = cond.as_bytes();
    let mut i = 0;
    while let Some(pos) = cond[i..].find("old(") {
        let start = i + pos;
        let word_start = start == 0 || !(bytes[start - 1].is_ascii_alphanumeric() || bytes[start - 1] == b'_');
        let open = start + 3;
        if !word_start {
            i = open;
            continue;
        }
        let mut depth = 0usize;
        let mut end = None;
        for (j, b) in bytes.iter().enumerate().skip(open) {
            match b {
                b'(' => depth += 1,
                b')' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(j);
                        break;
                    }
                }
                _ => {}
            }
        }
        let end = end.ok_or_else(|| "unbalanced parentheses in old(..)".to_string())?;
        let arg = cond[open + 1..end].to_string();
        if !found.contains(&arg) {
            found.push(arg);
        }
        i = end + 1;
    }
    Ok(found)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Draft {
    pub sets: Vec<PostconditionSet>,
    pub warnings: Vec<String>,
}

/// Asks the model for postconditions and parses its fenced blocks into one set.
pub fn draft_postconditions(
    unit: &SourceUnit,
    method: &MethodRecord,
    mutant_diffs: &[String],
    client: &dyn CompletionClient,
) -> Result<Draft, ClientError> {
    let req = draft_prompt(unit, method, mutant_diffs);
    let response = client.complete(&req)?;
    Ok(parse_draft(&response, &unit.adapter_id, &req.request_id[..12]))
}

pub fn parse_draft(response: &str, adapter_id: &str, set_suffix: &str) -> Draft {
    let mut warnings = Vec::new();
    let mut conditions = Vec::new();
    let blocks = fenced_blocks(response);
    if blocks.is_empty() {
        warnings.push("response contains no fenced block".to_string());
    }
    for (i, block) in blocks.into_iter().enumerate() {
        let text = match block {
            Ok(t) => t.split_whitespace().collect::<Vec<_>>().join(" "),
            Err(e) => {
                warnings.push(format!("block {}: {e}", i + 1));
                continue;
            }
        };
        let text = text.trim_end_matches(';').trim().to_string();
        if text.is_empty() {
            warnings.push(format!("block {}: empty", i + 1));
            continue;
        }
        let old_exprs = match old_arguments(&text) {
            Ok(v) => v,
            Err(e) => {
                warnings.push(format!("block {}: {e}", i + 1));
                continue;
            }
        };
        let mut probe = text.clone();
        for (j, expr) in old_exprs.iter().enumerate() {
            probe = probe.replace(&format!("old({expr})"), &format!("__old_{j}"));
        }
        let well_formed = check_expression(&probe, adapter_id).is_ok()
            && old_exprs.iter().all(|e| check_expression(e, adapter_id).is_ok());
        if !well_formed {
            warnings.push(format!("block {}: not a valid expression: {text}", i + 1));
            continue;
        }
        conditions.push(Condition {
            cond_id: format!("pc{}", conditions.len() + 1),
            source_text: text,
            old_exprs,
        });
    }
    let sets = if conditions.is_empty() {
        Vec::new()
    } else {
        vec![PostconditionSet {
            set_id: format!("draft-{set_suffix}"),
            conditions,
            meta: BTreeMap::new(),
        }]
    };
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Draft { sets, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    struct Scripted {
        replies: Mutex<Vec<Result<String, ClientError>>>,
        calls: Arc<AtomicUsize>,
    }

    impl HttpBackend for Scripted {
        fn post_json(&self, _: &str, _: &str, _: &serde_json::Value, _: Duration) -> Result<String, ClientError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn ok_body(text: &str) -> Result<String, ClientError> {
        Ok(json!({"choices": [{"message": {"content": text}}]}).to_string())
    }

    fn live(replies: Vec<Result<String, ClientError>>, auth_var: &str) -> (Client, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let transport = Transport {
            mode: TransportMode::Live,
            endpoint: Some("http://127.0.0.1:9/v1/chat".into()),
            transcript_path: None,
            auth_env_var: auth_var.into(),
            model: None,
            timeout_ms: 1000,
            max_in_flight: 2,
        };
        let backend = Scripted {
            replies: Mutex::new(replies),
            calls: calls.clone(),
        };
        (Client::with_backend(transport, Box::new(backend)).unwrap(), calls)
    }

    #[test]
    fn request_id_is_stable_and_content_addressed() {
        let a = request_id("sys", "user");
        assert_eq!(a, request_id("sys", "user"));
        assert_ne!(a, request_id("sy", "suser"));
        assert_eq!(a.len(), 64);
        // sha256 of ["sys","user"]
        let expected: String = Sha256::digest(br#"["sys","user"]"#).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(a, expected);
    }

    #[test]
    fn missing_auth_fails_before_network() {
        let (client, calls) = live(vec![ok_body("x")], "POSTCOND_TEST_UNSET_VAR_1");
        let err = client.complete(&PromptRequest::new("s", "u")).unwrap_err();
        assert_eq!(err, ClientError::AuthMissing("POSTCOND_TEST_UNSET_VAR_1".into()));
        assert_eq!(calls.load(Ordering::SeqCst), 0);
        assert_eq!(client.network_calls(), 0);
    }

    #[test]
    fn retry_schedule_on_503() {
        std::env::set_var("POSTCOND_TEST_KEY_RETRY", "k");
        let (client, calls) = live(
            vec![Err(ClientError::Http(503)), Err(ClientError::Http(503)), ok_body("fine")],
            "POSTCOND_TEST_KEY_RETRY",
        );
        let sleeps = Mutex::new(Vec::new());
        let out = complete_with_retry_using(&client, &PromptRequest::new("s", "u"), 3, 500, &|d| {
            sleeps.lock().unwrap().push(d.as_millis())
        })
        .unwrap();
        assert_eq!(out, "fine");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        assert_eq!(*sleeps.lock().unwrap(), vec![500, 1000]);
    }

    #[test]
    fn client_errors_are_not_retried() {
        std::env::set_var("POSTCOND_TEST_KEY_400", "k");
        let (client, calls) = live(vec![Err(ClientError::Http(400)), ok_body("x")], "POSTCOND_TEST_KEY_400");
        let err = complete_with_retry_using(&client, &PromptRequest::new("s", "u"), 3, 500, &|_| {}).unwrap_err();
        assert_eq!(err, ClientError::Http(400));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn first_success_issues_one_request() {
        std::env::set_var("POSTCOND_TEST_KEY_ONE", "k");
        let (client, calls) = live(vec![ok_body("a")], "POSTCOND_TEST_KEY_ONE");
        complete_with_retry_using(&client, &PromptRequest::new("s", "u"), 3, 500, &|_| panic!("no sleep")).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn record_then_replay() {
        std::env::set_var("POSTCOND_TEST_KEY_REC", "k");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let calls = Arc::new(AtomicUsize::new(0));
        let transport = Transport {
            mode: TransportMode::Record,
            endpoint: Some("http://127.0.0.1:9".into()),
            transcript_path: Some(path.clone()),
            auth_env_var: "POSTCOND_TEST_KEY_REC".into(),
            model: None,
            timeout_ms: 1000,
            max_in_flight: 1,
        };
        let backend = Scripted {
            replies: Mutex::new(vec![ok_body("if (n <= 0) {")]),
            calls,
        };
        let rec = Client::with_backend(transport, Box::new(backend)).unwrap();
        let req = PromptRequest::new("s", "u");
        assert_eq!(rec.complete(&req).unwrap(), "if (n <= 0) {");
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("POSTCOND_TEST_KEY_REC") && !text.contains("\"k\""));

        let replay = Client::new(Transport::replay(&path)).unwrap();
        assert_eq!(replay.complete(&req).unwrap(), "if (n <= 0) {");
        assert_eq!(
            replay.complete(&PromptRequest::new("s", "other")),
            Err(ClientError::ReplayMiss(request_id("s", "other")))
        );
        assert_eq!(replay.network_calls(), 0);
    }

    #[test]
    fn draft_parsing() {
        let two = "Here:\n```\nresult >= 0\n```\ntext\n```\nresult == old(acct.balance) + n\n```\n";
        let d = parse_draft(two, "fixture", "x");
        assert_eq!(d.sets.len(), 1);
        assert_eq!(d.sets[0].conditions.len(), 2);
        assert_eq!(d.sets[0].conditions[1].old_exprs, vec!["acct.balance".to_string()]);
        assert!(d.warnings.is_empty());

        let none = parse_draft("no code here", "fixture", "x");
        assert!(none.sets.is_empty());
        assert_eq!(none.warnings.len(), 1);

        let mixed = parse_draft("```\nresult >= \n```\n```\nresult != null\n```\n", "fixture", "x");
        assert_eq!(mixed.sets[0].conditions.len(), 1);
        assert_eq!(mixed.warnings.len(), 1);
    }
}
