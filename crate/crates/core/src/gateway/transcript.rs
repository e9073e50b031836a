//! Append-only request/response transcripts and the replay backend built on them.
//!
//! A transcript is JSON lines, one [`TranscriptRecord`] per completed request.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendKind, ChatBackend, ChatRequest, ChatResponse, Completion, GatewayError, Usage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub backend: BackendKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub request_hash: String,
    pub request: ChatRequest,
    pub response: RecordedResponse,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
}

impl TranscriptRecord {
    pub fn new(
        request: &ChatRequest,
        response: &ChatResponse,
        started: u64,
        finished: u64,
    ) -> Self {
        TranscriptRecord {
            request_hash: request.hash(),
            request: request.clone(),
            response: RecordedResponse {
                content: response.content.clone(),
                prompt_tokens: response.prompt_tokens,
                completion_tokens: response.completion_tokens,
                latency_ms: response.latency.as_millis() as u64,
                backend: response.backend,
            },
            started_at_ms: started,
            finished_at_ms: finished,
        }
    }
}

/// Serializes appends from concurrent workers through one lock.
pub struct TranscriptWriter {
    path: PathBuf,
    out: Mutex<BufWriter<File>>,
}

impl TranscriptWriter {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| GatewayError::Io {
                path: path.to_owned(),
                source,
            })?;
        Ok(TranscriptWriter {
            path: path.to_owned(),
            out: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &TranscriptRecord) -> Result<(), GatewayError> {
        let line = serde_json::to_string(record).expect("transcript record serializes");
        let io = |source| GatewayError::Io {
            path: self.path.clone(),
            source,
        };
        let mut out = self.out.lock().unwrap();
        writeln!(out, "{line}").map_err(io)?;
        out.flush().map_err(io)
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, GatewayError> {
    let text = std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
        path: path.to_owned(),
        source,
    })?;
    let corrupt = |line: usize, message: String| GatewayError::CorruptTranscript {
        path: path.to_owned(),
        line,
        message,
    };
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let record: TranscriptRecord =
            serde_json::from_str(raw).map_err(|e| corrupt(idx + 1, e.to_string()))?;
        if record.request.hash() != record.request_hash {
            return Err(corrupt(
                idx + 1,
                "request hash does not match the recorded request".into(),
            ));
        }
        records.push(record);
    }
    Ok(records)
}

/// Answers requests from a transcript. The first record for a hash wins.
pub struct ReplayBackend {
    entries: HashMap<String, RecordedResponse>,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        Ok(ReplayBackend::from_records(read_transcript(path)?))
    }

    pub fn from_records(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        let mut entries = HashMap::new();
        for record in records {
            entries
                .entry(record.request_hash)
                .or_insert(record.response);
        }
        ReplayBackend { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, request: &ChatRequest) -> bool {
        self.entries.contains_key(&request.hash())
    }

    pub fn lookup(&self, request: &ChatRequest) -> Option<&RecordedResponse> {
        self.entries.get(&request.hash())
    }

    pub fn recorded_latency(&self, request: &ChatRequest) -> Option<Duration> {
        self.entries
            .get(&request.hash())
            .map(|r| Duration::from_millis(r.latency_ms))
    }
}

impl ChatBackend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let hash = request.hash();
        let recorded = self
            .entries
            .get(&hash)
            .ok_or(GatewayError::ReplayMiss { hash })?;
        Ok(Completion {
            content: recorded.content.clone(),
            usage: Some(Usage {
                prompt_tokens: recorded.prompt_tokens,
                completion_tokens: recorded.completion_tokens,
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, MockBackend};
    use crate::prompt::{Message, Role};

    fn req(n: usize) -> ChatRequest {
        ChatRequest::new(
            "m",
            vec![Message::new(Role::User, format!("Question 1: {n}"))],
        )
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let recorder = Gateway::new(Box::new(MockBackend::scripted(["Answer 1:\nwhy\nyes"])))
            .with_transcript(TranscriptWriter::open(&path).unwrap());
        let original = recorder.send(&req(1)).unwrap();

        let replay = Gateway::new(Box::new(ReplayBackend::open(&path).unwrap()));
        for _ in 0..2 {
            let again = replay.send(&req(1)).unwrap();
            assert_eq!(again.content, original.content);
            assert_eq!(again.prompt_tokens, original.prompt_tokens);
            assert_eq!(again.completion_tokens, original.completion_tokens);
            assert_eq!(again.backend, BackendKind::Replay);
        }
        assert!(matches!(
            replay.send(&req(2)),
            Err(GatewayError::ReplayMiss { .. })
        ));
        assert_eq!(replay.network_calls(), 0);
    }

    #[test]
    fn corrupt_lines_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{\"not\": \"a record\"}\n").unwrap();
        assert!(matches!(
            ReplayBackend::open(&path),
            Err(GatewayError::CorruptTranscript { line: 1, .. })
        ));
    }

    #[test]
    fn tampered_request_is_rejected() {
        let r = req(1);
        let resp = ChatResponse {
            content: "x".into(),
            prompt_tokens: 1,
            completion_tokens: 1,
            latency: Duration::ZERO,
            backend: BackendKind::Mock,
        };
        let mut record = TranscriptRecord::new(&r, &resp, 0, 0);
        record.request.temperature = 1.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, serde_json::to_string(&record).unwrap()).unwrap();
        assert!(matches!(
            read_transcript(&path),
            Err(GatewayError::CorruptTranscript { .. })
        ));
    }
}
