//! Bracketed text serialization of records.
//!
//! A record renders as `[name: "value", other: ???]`: attributes in record
//! order, present values in double quotes, missing values as a bare `???`.
//! Inside quotes, `"` becomes `\"` and `\` becomes `\\`. Line breaks in a value
//! collapse to one space so that every serialized record fits on one line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DataInstance, Payload, Record, Task, TaskKind};

pub const MISSING_MARKER: &str = "???";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContextError {
    #[error("record `{0}` has no attributes")]
    EmptyRecord(String),
    #[error("instance `{id}` does not carry a {kind} payload")]
    PayloadTaskMismatch { id: String, kind: TaskKind },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SerializedText {
    Single(String),
    Pair { left: String, right: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedInstance {
    pub instance_id: String,
    pub text: SerializedText,
}

impl SerializedInstance {
    /// The serialized records joined by a space, e.g. as embedder input.
    pub fn joined(&self) -> String {
        match &self.text {
            SerializedText::Single(t) => t.clone(),
            SerializedText::Pair { left, right } => format!("{left} {right}"),
        }
    }
}

fn push_escaped(out: &mut String, value: &str) {
    let mut chars = value.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                out.push(' ');
            }
            '\n' => out.push(' '),
            c => out.push(c),
        }
    }
}

pub fn serialize_record(record: &Record) -> Result<String, ContextError> {
    if record.is_empty() {
        return Err(ContextError::EmptyRecord(record.id().to_owned()));
    }
    let mut out = String::from("[");
    for (i, cell) in record.cells().iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&cell.name);
        out.push_str(": ");
        match &cell.value {
            Some(value) => {
                out.push('"');
                push_escaped(&mut out, value);
                out.push('"');
            }
            None => out.push_str(MISSING_MARKER),
        }
    }
    out.push(']');
    Ok(out)
}

pub fn serialize_instance(
    instance: &DataInstance,
    task: &Task,
) -> Result<SerializedInstance, ContextError> {
    if !instance.payload.fits(task.kind()) {
        return Err(ContextError::PayloadTaskMismatch {
            id: instance.id.clone(),
            kind: task.kind(),
        });
    }
    let text = match &instance.payload {
        Payload::Tuple(r) => SerializedText::Single(serialize_record(r)?),
        Payload::AttributePair { left, right } | Payload::TuplePair { left, right } => {
            SerializedText::Pair {
                left: serialize_record(left)?,
                right: serialize_record(right)?,
            }
        }
    };
    Ok(SerializedInstance {
        instance_id: instance.id.clone(),
        text,
    })
}
