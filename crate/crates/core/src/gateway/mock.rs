//! Scripted offline backend: chat replies keyed by regex over the user
//! text (with per-rule reply queues for re-prompt scenarios) and
//! embeddings that are either scripted exactly or derived
//! deterministically from the text hash.

use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatRequest, GatewayError};

/// One scripted chat reply: either text or an injected failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text(String),
    Failure { error: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockChatRule {
    /// Regex matched against the request's user text.
    pub user_regex: String,
    /// Restrict the rule to one model id when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Replies consumed in order by successive matching backend calls.
    pub replies: Vec<MockReply>,
    /// Keep returning the final reply once the queue is exhausted.
    #[serde(default = "default_true")]
    pub repeat_last: bool,
}

fn default_true() -> bool {
    true
}

/// Script file: rules plus optional exact-text embedding overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub chat_rules: Vec<MockChatRule>,
    /// Exact text → vector; texts not listed get hash-derived vectors.
    #[serde(default)]
    pub embeddings: std::collections::BTreeMap<String, Vec<f64>>,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            chat_rules: Vec::new(),
            embeddings: Default::default(),
            embedding_dim: default_dim(),
        }
    }
}

fn default_dim() -> usize {
    8
}

impl MockScript {
    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        serde_json::from_str(text).map_err(|e| GatewayError::Cache(format!("mock script: {e}")))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| GatewayError::Cache(format!("mock script {:?}: {e}", path.as_ref())))?;
        Self::parse(&text)
    }

    pub fn rule(mut self, user_regex: &str, replies: &[&str]) -> Self {
        self.chat_rules.push(MockChatRule {
            user_regex: user_regex.to_string(),
            model: None,
            replies: replies.iter().map(|r| MockReply::Text(r.to_string())).collect(),
            repeat_last: true,
        });
        self
    }
}

pub struct MockBackend {
    script: MockScript,
    regexes: Vec<Regex>,
    cursors: Mutex<Vec<usize>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<Self, GatewayError> {
        let regexes = script
            .chat_rules
            .iter()
            .map(|r| {
                Regex::new(&r.user_regex)
                    .map_err(|e| GatewayError::Cache(format!("mock rule regex {:?}: {e}", r.user_regex)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let cursors = Mutex::new(vec![0; script.chat_rules.len()]);
        Ok(Self {
            script,
            regexes,
            cursors,
        })
    }
}

/// Unit vector derived from the text digest; identical text gives an
/// identical vector on any machine.
pub fn derived_embedding(model_id: &str, text: &str, dim: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(model_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    } else {
        v[0] = 1.0;
    }
    v
}

impl ChatBackend for MockBackend {
    fn raw_complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        for (idx, rule) in self.script.chat_rules.iter().enumerate() {
            if let Some(model) = &rule.model {
                if model != &req.model_id {
                    continue;
                }
            }
            if !self.regexes[idx].is_match(&req.user_text) {
                continue;
            }
            let mut cursors = self.cursors.lock().expect("cursors poisoned");
            let cursor = cursors[idx];
            let reply = if cursor < rule.replies.len() {
                cursors[idx] += 1;
                &rule.replies[cursor]
            } else if rule.repeat_last && !rule.replies.is_empty() {
                rule.replies.last().expect("non-empty")
            } else {
                return Err(GatewayError::MockMiss(format!(
                    "rule {:?} exhausted after {} replies",
                    rule.user_regex,
                    rule.replies.len()
                )));
            };
            return match reply {
                MockReply::Text(text) => Ok(text.clone()),
                MockReply::Failure { error } => match error.as_str() {
                    "transport" => Err(GatewayError::Transport {
                        message: "scripted transport failure".into(),
                        retryable: true,
                    }),
                    "rate_limited" => Err(GatewayError::RateLimited {
                        retry_after_ms: Some(0),
                    }),
                    "auth" => Err(GatewayError::Auth),
                    other => Err(GatewayError::Transport {
                        message: format!("scripted failure {other:?}"),
                        retryable: false,
                    }),
                },
            };
        }
        let preview: String = req.user_text.chars().take(120).collect();
        Err(GatewayError::MockMiss(preview))
    }

    fn raw_embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts
            .iter()
            .map(|text| {
                self.script
                    .embeddings
                    .get(text)
                    .cloned()
                    .unwrap_or_else(|| derived_embedding(model_id, text, self.script.embedding_dim))
            })
            .collect())
    }
}
