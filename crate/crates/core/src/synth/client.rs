use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::GenerationRequest;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    /// Worth retrying.
    #[error("transport error: {0}")]
    Transport(String),
    /// The service answered with something unusable.
    #[error("malformed response: {0}")]
    Malformed(String),
}

pub trait GenerationClient: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpClientConfig {
    pub endpoint: String,
    pub model: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    /// Environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_secs: u64,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/generate".into(),
            model: "instruct".into(),
            max_output_tokens: 2048,
            temperature: 0.0,
            token_env: "CODECURATE_API_TOKEN".into(),
            timeout_secs: 120,
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_output_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    text: String,
}

/// Client for a single JSON endpoint: `{model, prompt, max_output_tokens,
/// temperature}` in, `{text}` out.
pub struct HttpClient {
    config: HttpClientConfig,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(config: HttpClientConfig) -> Result<Self, ClientError> {
        let token = std::env::var(&config.token_env).ok();
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self { config, token, http })
    }
}

impl GenerationClient for HttpClient {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ClientError> {
        let body = WireRequest {
            model: &self.config.model,
            prompt: &request.prompt_text,
            max_output_tokens: self.config.max_output_tokens,
            temperature: self.config.temperature,
        };
        let mut req = self.http.post(&self.config.endpoint).json(&body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(ClientError::Transport(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(ClientError::Malformed(format!("status {status}")));
        }
        let parsed: WireResponse = resp
            .json()
            .map_err(|e| ClientError::Malformed(e.to_string()))?;
        Ok(parsed.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum MockMode {
    /// A fenced file derived from the seed by a fixed character rewrite.
    EchoTransform,
    Empty,
    /// The seed snippet itself.
    Verbatim,
    /// Fail the first `failures` attempts of each request, then echo.
    FailTransport { failures: usize },
    Fixed { text: String },
}

/// Offline deterministic generator.
pub struct MockClient {
    mode: MockMode,
    attempts: Mutex<HashMap<String, usize>>,
}

impl MockClient {
    pub fn new(mode: MockMode) -> Self {
        Self {
            mode,
            attempts: Mutex::new(HashMap::new()),
        }
    }
}

fn rot(c: char) -> char {
    match c {
        'a'..='z' => (b'a' + (c as u8 - b'a' + 13) % 26) as char,
        'A'..='Z' => (b'A' + (c as u8 - b'A' + 13) % 26) as char,
        '0'..='9' => (b'0' + (c as u8 - b'0' + 5) % 10) as char,
        _ => c,
    }
}

fn line_comment(lang: &str) -> &'static str {
    match lang.to_ascii_lowercase().as_str() {
        "python" | "ruby" | "shell" => "#",
        "sql" => "--",
        _ => "//",
    }
}

/// The echo-transform output for a request.
pub fn echo_transform(request: &GenerationRequest) -> String {
    let snippet = request.seed_snippet().unwrap_or_default();
    let body: String = snippet.chars().map(rot).collect();
    let lang = request.language.as_str();
    format!(
        "Here is the file.\n\n```{}\n{} generated file for {}\n{}\n```\n",
        lang.to_ascii_lowercase(),
        line_comment(lang),
        request.request_id,
        body.trim_end()
    )
}

impl GenerationClient for MockClient {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ClientError> {
        let attempt = {
            let mut a = self.attempts.lock().expect("mock lock");
            let n = a.entry(request.request_id.clone()).or_default();
            *n += 1;
            *n
        };
        match &self.mode {
            MockMode::EchoTransform => Ok(echo_transform(request)),
            MockMode::Empty => Ok(String::new()),
            MockMode::Verbatim => Ok(request.seed_snippet().unwrap_or_default().to_string()),
            MockMode::FailTransport { failures } if attempt <= *failures => {
                Err(ClientError::Transport(format!("mock failure {attempt}")))
            }
            MockMode::FailTransport { .. } => Ok(echo_transform(request)),
            MockMode::Fixed { text } => Ok(text.clone()),
        }
    }
}
