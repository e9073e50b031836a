//! Deterministic in-process backend.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendKind, ChatBackend, ChatRequest, Completion, GatewayError};
use crate::prompt::Role;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockAnswer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub answer: String,
}

impl MockAnswer {
    pub fn new(reason: Option<&str>, answer: &str) -> Self {
        MockAnswer {
            reason: reason.map(str::to_owned),
            answer: answer.to_owned(),
        }
    }
}

type Responder = Box<dyn Fn(&ChatRequest) -> String + Send + Sync>;

enum Script {
    Queue(Mutex<VecDeque<String>>),
    Responder(Responder),
}

pub struct MockBackend {
    script: Script,
}

/// `(k, body)` for every `Question k: body` line of the last user message.
fn batch_questions(request: &ChatRequest) -> Vec<(usize, &str)> {
    let Some(last) = request.messages.iter().rev().find(|m| m.role == Role::User) else {
        return Vec::new();
    };
    last.content
        .lines()
        .filter_map(|line| {
            let rest = line.strip_prefix("Question ")?;
            let (num, body) = rest.split_once(": ")?;
            Some((num.parse().ok()?, body))
        })
        .collect()
}

fn render(index: usize, answer: &MockAnswer) -> String {
    match &answer.reason {
        Some(reason) => format!("Answer {index}:\n{reason}\n{}", answer.answer),
        None => format!("Answer {index}:\n{}", answer.answer),
    }
}

impl MockBackend {
    /// Replies with the given contents in order; errors once they run out.
    pub fn scripted<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        MockBackend {
            script: Script::Queue(Mutex::new(responses.into_iter().map(Into::into).collect())),
        }
    }

    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> String + Send + Sync + 'static,
    {
        MockBackend {
            script: Script::Responder(Box::new(f)),
        }
    }

    /// Gives the same answer to every question of every batch.
    pub fn constant(answer: MockAnswer) -> Self {
        MockBackend::from_fn(move |req| {
            batch_questions(req)
                .iter()
                .map(|(k, _)| render(*k, &answer))
                .collect::<Vec<_>>()
                .join("\n")
        })
    }

    /// Answers each question by looking up its body (the text after
    /// `Question k: `). Unknown questions get `fallback`, or are skipped.
    pub fn by_question(answers: HashMap<String, MockAnswer>, fallback: Option<MockAnswer>) -> Self {
        MockBackend::from_fn(move |req| {
            batch_questions(req)
                .iter()
                .filter_map(|(k, body)| {
                    answers
                        .get(*body)
                        .or(fallback.as_ref())
                        .map(|a| render(*k, a))
                })
                .collect::<Vec<_>>()
                .join("\n")
        })
    }
}

impl ChatBackend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let content = match &self.script {
            Script::Queue(queue) => queue
                .lock()
                .unwrap()
                .pop_front()
                .ok_or_else(|| GatewayError::ProtocolError("mock script exhausted".into()))?,
            Script::Responder(f) => f(request),
        };
        Ok(Completion {
            content,
            usage: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::Message;

    fn req(batch: &str) -> ChatRequest {
        ChatRequest::new(
            "m",
            vec![
                Message::new(Role::System, "p"),
                Message::new(Role::User, "Question 1: few-shot"),
                Message::new(Role::Assistant, "Answer 1:\nr\nyes"),
                Message::new(Role::User, batch),
            ],
        )
    }

    #[test]
    fn scripted_queue() {
        let mock = MockBackend::scripted(["a", "b"]);
        let r = req("Question 1: x");
        assert_eq!(mock.complete(&r).unwrap().content, "a");
        assert_eq!(mock.complete(&r).unwrap().content, "b");
        assert!(mock.complete(&r).is_err());
    }

    #[test]
    fn constant_answers_every_batch_question() {
        let mock = MockBackend::constant(MockAnswer::new(Some("looks same"), "yes"));
        let out = mock
            .complete(&req("Question 1: a\nQuestion 2: b"))
            .unwrap()
            .content;
        assert_eq!(
            out,
            "Answer 1:\nlooks same\nyes\nAnswer 2:\nlooks same\nyes"
        );
    }

    #[test]
    fn lookup_by_question_body() {
        let mut answers = HashMap::new();
        answers.insert("b".to_owned(), MockAnswer::new(None, "no"));
        let mock = MockBackend::by_question(answers, Some(MockAnswer::new(None, "yes")));
        let out = mock
            .complete(&req("Question 1: a\nQuestion 2: b"))
            .unwrap()
            .content;
        assert_eq!(out, "Answer 1:\nyes\nAnswer 2:\nno");
    }
}
