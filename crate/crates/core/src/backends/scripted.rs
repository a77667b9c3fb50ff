use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendRequest, Completion, CompletionError, RequestKind};

/// One request served by a [`ScriptedBackend`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedCall {
    pub ordinal: usize,
    pub kind: RequestKind,
    /// File that answered, or `-` when none did.
    pub source: String,
}

/// Replays canned responses from a directory.
///
/// Request `n` (1-based, counted across all requests this backend sees) is
/// answered by `NNN.json`; `NNN.timeout` simulates a timeout and `NNN.error`
/// a transient failure carrying the file's text. `default.json` answers any
/// ordinal without its own file.
#[derive(Debug)]
pub struct ScriptedBackend {
    dir: PathBuf,
    calls: Mutex<Vec<ScriptedCall>>,
}

impl ScriptedBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, CompletionError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(CompletionError::Fatal(format!("scripted response directory {} not found", dir.display())));
        }
        Ok(Self { dir, calls: Mutex::new(Vec::new()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn calls(&self) -> Vec<ScriptedCall> {
        self.calls.lock().expect("call log").clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().expect("call log").len()
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> String {
        format!("scripted:{}", self.dir.display())
    }

    fn complete(&self, request: &BackendRequest) -> Result<Completion, CompletionError> {
        let mut calls = self.calls.lock().expect("call log");
        let ordinal = calls.len() + 1;
        let stem = format!("{ordinal:03}");
        let mut record =
            |source: &str| calls.push(ScriptedCall { ordinal, kind: request.kind, source: source.to_string() });
        let read = |name: &str| fs::read_to_string(self.dir.join(name));

        if self.dir.join(format!("{stem}.timeout")).exists() {
            record(&format!("{stem}.timeout"));
            return Err(CompletionError::Timeout);
        }
        if let Ok(msg) = read(&format!("{stem}.error")) {
            record(&format!("{stem}.error"));
            return Err(CompletionError::Transient(msg.trim().to_string()));
        }
        for name in [format!("{stem}.json"), "default.json".to_string()] {
            if let Ok(text) = read(&name) {
                record(&name);
                return Ok(Completion::text(text));
            }
        }
        record("-");
        Err(CompletionError::Fatal(format!("no scripted response for request {ordinal}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{request_structured, BackendError, TokenLedger};

    fn request() -> BackendRequest {
        BackendRequest {
            kind: RequestKind::Repair,
            schema_id: "x".into(),
            context_documents: vec![],
            constraint_block: String::new(),
            timeout_s: 1,
        }
    }

    #[test]
    fn ordinals_variants_and_default() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("001.json"), "one").unwrap();
        fs::write(d.path().join("002.timeout"), "").unwrap();
        fs::write(d.path().join("003.error"), "boom\n").unwrap();
        fs::write(d.path().join("default.json"), "dflt").unwrap();
        let b = ScriptedBackend::new(d.path()).unwrap();
        assert_eq!(b.complete(&request()).unwrap().document, "one");
        assert_eq!(b.complete(&request()), Err(CompletionError::Timeout));
        assert_eq!(b.complete(&request()), Err(CompletionError::Transient("boom".into())));
        assert_eq!(b.complete(&request()).unwrap().document, "dflt");
        let sources: Vec<_> = b.calls().into_iter().map(|c| c.source).collect();
        assert_eq!(sources, ["001.json", "002.timeout", "003.error", "default.json"]);
    }

    #[test]
    fn five_malformed_documents_exhaust_budget_of_five() {
        let d = tempfile::tempdir().unwrap();
        for i in 1..=6 {
            fs::write(d.path().join(format!("{i:03}.json")), "not json").unwrap();
        }
        let b = ScriptedBackend::new(d.path()).unwrap();
        let err = request_structured(&b, &request(), 5, &TokenLedger::default(), |s| {
            serde_json::from_str::<serde_json::Value>(s).map_err(|e| e.to_string())
        })
        .unwrap_err();
        assert!(matches!(err, BackendError::StructuredOutputExhausted { attempts: 5, .. }));
        assert_eq!(b.call_count(), 5);
    }

    #[test]
    fn missing_directory_is_fatal() {
        assert!(ScriptedBackend::new("/no/such/dir").is_err());
    }
}
