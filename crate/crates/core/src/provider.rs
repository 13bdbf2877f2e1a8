//! Text-generation provider contract, stub providers, and a subprocess transport.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::ProviderError;
use crate::knowledge_base::words;

pub const PROVIDER_CMD_ENV: &str = "VRRAG_PROVIDER_CMD";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
}

pub trait GenerationProvider: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ProviderError>;
}

/// In-process providers for tests and CI.
#[derive(Debug, Clone)]
pub enum StubProvider {
    /// First `words` words of the prompt payload (everything after the first blank line).
    Echo { words: usize },
    /// Always the same text.
    Fixed(String),
    /// Answers with the candidate whose line carries `KEY_<true species>`,
    /// looking the true species up by `image_ref`. Answers "unknown" otherwise.
    KeywordOracle { truth: HashMap<String, String> },
    /// Every call fails.
    Failing { message: String },
}

pub const ORACLE_NO_ANSWER: &str = "unknown";

pub fn keyword_for(species_id: &str) -> String {
    format!("KEY_{species_id}")
}

fn payload(prompt: &str) -> &str {
    prompt.split_once("\n\n").map_or(prompt, |(_, rest)| rest)
}

impl GenerationProvider for StubProvider {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ProviderError> {
        let text = match self {
            StubProvider::Echo { words: n } => {
                words(payload(&request.prompt)).take(*n).collect::<Vec<_>>().join(" ")
            }
            StubProvider::Fixed(text) => text.clone(),
            StubProvider::KeywordOracle { truth } => {
                let keyword = request.image_ref.as_ref().and_then(|r| truth.get(r)).map(|s| keyword_for(s));
                keyword
                    .and_then(|kw| {
                        request
                            .prompt
                            .lines()
                            .filter(|line| words(line).any(|w| w == kw))
                            .find_map(|line| line.split_once(": ").map(|(name, _)| name.trim().to_string()))
                    })
                    .unwrap_or_else(|| ORACLE_NO_ANSWER.to_string())
            }
            StubProvider::Failing { message } => {
                return Err(ProviderError::Failed { attempts: 1, message: message.clone() })
            }
        };
        Ok(GenerationResponse { text })
    }
}

/// Runs an external program per request: the JSON request goes to stdin and
/// a JSON response is read from stdout.
#[derive(Debug, Clone)]
pub struct CommandProvider {
    pub program: String,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl CommandProvider {
    pub fn from_command_line(command: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| ProviderError::InvalidSpec(command.to_string()))?;
        Ok(CommandProvider { program, args: parts.collect(), timeout })
    }
}

impl GenerationProvider for CommandProvider {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ProviderError> {
        let failed = |message: String| ProviderError::Failed { attempts: 1, message };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| failed(format!("spawn `{}`: {e}", self.program)))?;

        let body = serde_json::to_vec(request).expect("request serializes");
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || {
            let _ = stdin.write_all(&body);
        });
        let mut stdout = child.stdout.take().expect("piped stdout");
        let reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(ProviderError::Timeout { attempts: 1, timeout_ms: self.timeout.as_millis() as u64 });
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(2)),
                Err(e) => return Err(failed(e.to_string())),
            }
        };
        let _ = writer.join();
        let out = reader.join().expect("reader thread").map_err(|e| failed(e.to_string()))?;
        if !status.success() {
            return Err(failed(format!("`{}` exited with {status}", self.program)));
        }
        serde_json::from_slice(&out).map_err(|e| failed(format!("bad response: {e}")))
    }
}

/// Retries retriable failures up to `max_attempts` times in total.
pub struct Retrying<P> {
    pub inner: P,
    pub max_attempts: u32,
}

impl<P: GenerationProvider> GenerationProvider for Retrying<P> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ProviderError> {
        let attempts = self.max_attempts.max(1);
        let mut n = 0;
        loop {
            n += 1;
            match self.inner.generate(request) {
                Ok(r) => return Ok(r),
                Err(e) if e.is_retriable() && n < attempts => continue,
                Err(e) => return Err(e.with_attempts(n)),
            }
        }
    }
}

impl GenerationProvider for Box<dyn GenerationProvider> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ProviderError> {
        (**self).generate(request)
    }
}

#[derive(Debug, Clone)]
pub struct ProviderOptions {
    pub timeout: Duration,
    pub max_attempts: u32,
    /// query/image reference → true species, for the keyword oracle.
    pub truth: HashMap<String, String>,
    /// Replacement command for `cmd:` specs, normally from `VRRAG_PROVIDER_CMD`.
    pub command_override: Option<String>,
}

impl Default for ProviderOptions {
    fn default() -> Self {
        ProviderOptions { timeout: Duration::from_secs(60), max_attempts: 3, truth: HashMap::new(), command_override: None }
    }
}

/// Parses `stub:echo[:N]`, `stub:fixed:<text>`, `stub:keyword`, `stub:fail`
/// or `cmd:<program and args>`.
pub fn from_spec(spec: &str, opts: &ProviderOptions) -> Result<Box<dyn GenerationProvider>, ProviderError> {
    let invalid = || ProviderError::InvalidSpec(spec.to_string());
    let (scheme, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match scheme {
        "stub" => {
            let (mode, arg) = rest.split_once(':').unwrap_or((rest, ""));
            let stub = match mode {
                "echo" if arg.is_empty() => StubProvider::Echo { words: 50 },
                "echo" => StubProvider::Echo { words: arg.parse().map_err(|_| invalid())? },
                "fixed" => StubProvider::Fixed(arg.to_string()),
                "keyword" => StubProvider::KeywordOracle { truth: opts.truth.clone() },
                "fail" => StubProvider::Failing { message: "stub failure".into() },
                _ => return Err(invalid()),
            };
            Ok(Box::new(stub))
        }
        "cmd" => {
            let command = opts.command_override.as_deref().unwrap_or(rest);
            let inner = CommandProvider::from_command_line(command, opts.timeout).map_err(|_| invalid())?;
            Ok(Box::new(Retrying { inner, max_attempts: opts.max_attempts }))
        }
        _ => Err(invalid()),
    }
}
