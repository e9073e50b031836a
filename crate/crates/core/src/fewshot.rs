//! Few-shot sidecar files.
//!
//! One JSON object per line. The example either references a loaded instance
//! by id, or carries the record(s) inline:
//!
//! ```text
//! {"instance": "restaurant.csv:12", "reason": "...", "answer": "Marietta"}
//! {"record": {"name": "carey's corner", "city": null}, "reason": "...", "answer": "Marietta"}
//! {"left": {"title": "ipod"}, "right": {"title": "apple ipod"}, "reason": "...", "answer": "yes"}
//! ```
//!
//! Inline records keep the key order of the JSON object; `null` is a missing value.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::model::{Cell, DataError, DataInstance, Record, Task, TaskKind};
use crate::prompt::{FewShotExample, PromptError};

#[derive(Debug, Error)]
pub enum FewShotError {
    #[error("failed to read few-shot file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("few-shot line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("few-shot line {line}: {message}")]
    Shape { line: usize, message: String },
    #[error("few-shot line {line}: unknown instance `{id}`")]
    UnknownInstance { line: usize, id: String },
    #[error("few-shot line {line}: {source}")]
    Data {
        line: usize,
        #[source]
        source: DataError,
    },
    #[error("few-shot line {line}: {source}")]
    Example {
        line: usize,
        #[source]
        source: PromptError,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarLine {
    #[serde(default)]
    instance: Option<String>,
    #[serde(default)]
    record: Option<Map<String, Value>>,
    #[serde(default)]
    left: Option<Map<String, Value>>,
    #[serde(default)]
    right: Option<Map<String, Value>>,
    reason: String,
    answer: String,
}

fn inline_record(
    id: String,
    fields: &Map<String, Value>,
    line: usize,
) -> Result<Record, FewShotError> {
    let cells = fields
        .iter()
        .map(|(name, value)| {
            let value = match value {
                Value::Null => None,
                Value::String(s) => Some(s.clone()),
                Value::Number(n) => Some(n.to_string()),
                Value::Bool(b) => Some(b.to_string()),
                _ => {
                    return Err(FewShotError::Shape {
                        line,
                        message: format!("attribute `{name}` must be a scalar or null"),
                    })
                }
            };
            Ok(Cell {
                name: name.clone(),
                value,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Record::new(id, cells).map_err(|source| FewShotError::Data { line, source })
}

/// Parses sidecar text. `dataset` resolves `instance` references.
pub fn parse_few_shots(
    text: &str,
    task: &Task,
    dataset: &[DataInstance],
) -> Result<Vec<FewShotExample>, FewShotError> {
    let by_id: HashMap<&str, &DataInstance> = dataset.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let entry: SidecarLine =
            serde_json::from_str(raw).map_err(|source| FewShotError::Json { line, source })?;
        let id = format!("fewshot:{line}");
        let instance = match (&entry.instance, &entry.record, &entry.left, &entry.right) {
            (Some(reference), None, None, None) => {
                let found =
                    by_id
                        .get(reference.as_str())
                        .ok_or_else(|| FewShotError::UnknownInstance {
                            line,
                            id: reference.clone(),
                        })?;
                DataInstance {
                    id: found.id.clone(),
                    payload: found.payload.clone(),
                    gold: None,
                }
            }
            (None, Some(fields), None, None) if !task.kind().is_pair() => {
                DataInstance::tuple(id.clone(), inline_record(id, fields, line)?)
            }
            (None, None, Some(l), Some(r)) if task.kind().is_pair() => {
                let left = inline_record(format!("{id}/left"), l, line)?;
                let right = inline_record(format!("{id}/right"), r, line)?;
                match task.kind() {
                    TaskKind::SchemaMatching => DataInstance::attribute_pair(id, left, right),
                    _ => DataInstance::tuple_pair(id, left, right),
                }
            }
            _ => {
                return Err(FewShotError::Shape {
                    line,
                    message: format!(
                        "expected exactly one of `instance`, {} for a {} task",
                        if task.kind().is_pair() {
                            "`left`+`right`"
                        } else {
                            "`record`"
                        },
                        task.kind()
                    ),
                })
            }
        };
        instance
            .validate(task)
            .map_err(|source| FewShotError::Data { line, source })?;
        let example = FewShotExample::new(instance, entry.reason, entry.answer)
            .map_err(|source| FewShotError::Example { line, source })?;
        out.push(example);
    }
    Ok(out)
}

pub fn load_few_shots(
    path: &Path,
    task: &Task,
    dataset: &[DataInstance],
) -> Result<Vec<FewShotExample>, FewShotError> {
    let text = std::fs::read_to_string(path).map_err(|source| FewShotError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_few_shots(&text, task, dataset)
}
