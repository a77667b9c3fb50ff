use std::env;
use std::time::Duration;

use serde_json::{json, Value};

use super::request::{PLAN_SCHEMA_ID, REPAIR_SCHEMA_ID};
use super::{Backend, BackendRequest, Completion, CompletionError, RequestKind, TokenUsage};

const PLAN_SHAPE: &str = r#"Respond with one JSON object:
{"install_commands": [Command], "doctor_commands": [Command], "minimal_verify": Command,
 "strongest_verify": Command or null, "run_probes": [Command], "constraints_notes": [string],
 "evidence_links": {"<phase>/<index>": [path]}, "agent_context": string}
Command = {"cmd": string, "reason": string, "cwd": string (optional, default "."),
 "timeout_s": integer (optional), "provenance": "file:<path>" | "ci:<workflow>#<job>/<step>" | "backend-inferred"}
Phases: install, doctor, minimal_verify, strongest_verify, run_probes."#;

const REPAIR_SHAPE: &str = r#"Respond with one JSON object {"edits": [Edit], "rationale": string}. Edit is one of:
{"op":"insert_commands","stage":Phase,"index":n,"commands":[Command]}
{"op":"remove_commands","stage":Phase,"indices":[n]}
{"op":"replace_commands","stage":Phase,"index":n,"command":Command}
{"op":"move_commands","stage":Phase,"from":n,"to":n}
{"op":"replace_doctor","commands":[Command]}
{"op":"replace_install","commands":[Command]}
{"op":"set_minimal_verify","command":Command}
{"op":"set_strongest_verify","command":Command or null}
{"op":"update_field","field":"cwd"|"timeout_s"|"agent_context"|"evidence_links"|"failure_playbook","target":"<phase>/<index>" or null,"value":any}
Phase is install, doctor or run_probes for list edits. Command has the plan's command shape."#;

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmConfig {
    /// Full URL of the chat-completions resource.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    /// Overrides the per-request timeout when set.
    pub timeout_s: Option<u64>,
    pub temperature: f64,
}

impl LlmConfig {
    /// Reads `REPOBOOT_LLM_ENDPOINT`, `REPOBOOT_LLM_MODEL`,
    /// `REPOBOOT_LLM_API_KEY`, `REPOBOOT_LLM_TIMEOUT_S` and
    /// `REPOBOOT_LLM_TEMPERATURE`.
    pub fn from_env() -> Result<Self, String> {
        let endpoint = env::var("REPOBOOT_LLM_ENDPOINT").map_err(|_| "REPOBOOT_LLM_ENDPOINT is not set".to_string())?;
        let model = env::var("REPOBOOT_LLM_MODEL").map_err(|_| "REPOBOOT_LLM_MODEL is not set".to_string())?;
        let timeout_s = match env::var("REPOBOOT_LLM_TIMEOUT_S") {
            Ok(v) => Some(v.parse().map_err(|_| format!("bad REPOBOOT_LLM_TIMEOUT_S `{v}`"))?),
            Err(_) => None,
        };
        let temperature = match env::var("REPOBOOT_LLM_TEMPERATURE") {
            Ok(v) => v.parse().map_err(|_| format!("bad REPOBOOT_LLM_TEMPERATURE `{v}`"))?,
            Err(_) => 1.0,
        };
        Ok(Self { endpoint, model, api_key: env::var("REPOBOOT_LLM_API_KEY").ok(), timeout_s, temperature })
    }
}

#[derive(Debug)]
pub struct LlmBackend {
    config: LlmConfig,
    client: reqwest::blocking::Client,
}

impl LlmBackend {
    pub fn new(config: LlmConfig) -> Result<Self, CompletionError> {
        let client = reqwest::blocking::Client::builder().build().map_err(|e| CompletionError::Fatal(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn messages(request: &BackendRequest) -> Value {
        let (task, shape) = match request.kind {
            RequestKind::Plan => ("Generate a bootstrap plan for this repository from the evidence below.", PLAN_SHAPE),
            RequestKind::Repair => {
                ("The verifier failed on the current plan. Propose a repair delta for it.", REPAIR_SHAPE)
            }
        };
        let mut user = format!("{task}\nSchema: {}\n", request.schema_id);
        for doc in &request.context_documents {
            user.push_str(&format!("\n{}:\n{}\n", doc.label, doc.body));
        }
        json!([
            { "role": "system", "content": format!("{}\n\n{}", request.constraint_block, shape) },
            { "role": "user", "content": user },
        ])
    }
}

impl Backend for LlmBackend {
    fn name(&self) -> String {
        format!("llm:{}", self.config.model)
    }

    fn complete(&self, request: &BackendRequest) -> Result<Completion, CompletionError> {
        debug_assert!(request.schema_id == PLAN_SCHEMA_ID || request.schema_id == REPAIR_SCHEMA_ID);
        let body = json!({
            "model": self.config.model,
            "messages": Self::messages(request),
            "temperature": self.config.temperature,
            "response_format": { "type": "json_object" },
        });
        let timeout = Duration::from_secs(self.config.timeout_s.unwrap_or(request.timeout_s).max(1));
        let mut req = self.client.post(&self.config.endpoint).timeout(timeout).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                CompletionError::Timeout
            } else if e.is_connect() || e.is_builder() {
                CompletionError::Fatal(e.to_string())
            } else {
                CompletionError::Transient(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.is_client_error() && status.as_u16() != 429 && status.as_u16() != 408 {
            return Err(CompletionError::Fatal(format!("endpoint returned {status}")));
        }
        if !status.is_success() {
            return Err(CompletionError::Transient(format!("endpoint returned {status}")));
        }
        let value: Value = resp.json().map_err(|e| CompletionError::Transient(e.to_string()))?;
        let document = value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| CompletionError::Transient("response has no message content".into()))?
            .to_string();
        let usage = value.get("usage").map(|u| TokenUsage {
            input: u.get("prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            output: u.get("completion_tokens").and_then(Value::as_u64).unwrap_or(0),
        });
        Ok(Completion { document, token_usage: usage })
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    use super::*;
    use crate::backends::{request_structured, TokenLedger};

    /// Serves the given bodies (status, json) one per connection.
    fn mock(replies: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn reply(content: &str, input: u64, output: u64) -> String {
        json!({
            "choices": [{ "message": { "role": "assistant", "content": content } }],
            "usage": { "prompt_tokens": input, "completion_tokens": output }
        })
        .to_string()
    }

    fn request() -> BackendRequest {
        BackendRequest {
            kind: RequestKind::Plan,
            schema_id: PLAN_SCHEMA_ID.into(),
            context_documents: vec![super::super::ContextDocument {
                label: "DiscoveryReport".into(),
                body: "{}".into(),
            }],
            constraint_block: "rules".into(),
            timeout_s: 5,
        }
    }

    #[test]
    fn retries_and_accumulates_tokens() {
        let (url, server) =
            mock(vec![(200, reply("not json", 10, 2)), (500, "{}".into()), (200, reply("{\"ok\":1}", 7, 3))]);
        let backend = LlmBackend::new(LlmConfig {
            endpoint: url,
            model: "m".into(),
            api_key: Some("k".into()),
            timeout_s: None,
            temperature: 1.0,
        })
        .unwrap();
        let ledger = TokenLedger::default();
        let r = request_structured(&backend, &request(), 5, &ledger, |s| {
            serde_json::from_str::<Value>(s).map_err(|e| e.to_string())
        })
        .unwrap();
        assert_eq!(r.attempts, 3);
        assert_eq!(r.value["ok"], 1);
        let t = ledger.totals();
        assert_eq!((t.input, t.output, t.total), (17, 5, 22));
        let bodies = server.join().unwrap();
        let first: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(first["model"], "m");
        assert!(first["messages"][1]["content"].as_str().unwrap().contains("DiscoveryReport:\n{}"));
    }

    #[test]
    fn client_errors_are_fatal() {
        let (url, server) = mock(vec![(401, "{}".into())]);
        let backend = LlmBackend::new(LlmConfig {
            endpoint: url,
            model: "m".into(),
            api_key: None,
            timeout_s: Some(5),
            temperature: 0.0,
        })
        .unwrap();
        assert!(matches!(backend.complete(&request()), Err(CompletionError::Fatal(_))));
        server.join().unwrap();
    }
}
