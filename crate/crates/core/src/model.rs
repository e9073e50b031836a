//! Tasks, records and data instances.
//!
//! A [`DataInstance`] is the unit of work that becomes one numbered question in a
//! prompt: a single tuple for error detection and imputation, a pair of attribute
//! descriptions for schema matching, or a pair of tuples for entity matching.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Attribute names that every schema-matching record carries, in order.
pub const SCHEMA_ATTRIBUTES: [&str; 2] = ["name", "description"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited data in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: row {row} has {found} columns, header has {expected}")]
    MalformedRow {
        path: PathBuf,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate attribute `{0}`")]
    DuplicateAttribute(String),
    #[error("target attribute `{0}` is not a column of the dataset")]
    MissingTargetAttribute(String),
    #[error("{path}: required column `{column}` is missing")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: pair references unknown record id `{id}`")]
    UnknownRecordId { path: PathBuf, id: String },
    #[error("label for `{id}` must be 0 or 1, got `{token}`")]
    UnknownLabelToken { id: String, token: String },
    #[error("{path}: label row {row} must have exactly two fields")]
    MalformedLabelRow { path: PathBuf, row: usize },
    #[error("attribute `{0}` does not exist in the record")]
    UnknownAttribute(String),
    #[error("feature selection drops the target attribute `{0}`")]
    TargetAttributeDropped(String),
    #[error("instance `{id}` does not carry a {kind} payload")]
    PayloadTaskMismatch { id: String, kind: TaskKind },
    #[error("instance `{id}`: schema matching records need exactly `name` and `description`")]
    SchemaShape { id: String },
    #[error("instance `{id}`: gold label type does not fit a {kind} task")]
    LabelTaskMismatch { id: String, kind: TaskKind },
    #[error("invalid task: {0}")]
    InvalidTask(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ErrorDetection,
    DataImputation,
    SchemaMatching,
    EntityMatching,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::ErrorDetection,
        TaskKind::DataImputation,
        TaskKind::SchemaMatching,
        TaskKind::EntityMatching,
    ];

    pub fn needs_target(self) -> bool {
        matches!(self, TaskKind::ErrorDetection | TaskKind::DataImputation)
    }

    /// Every task except imputation answers yes/no.
    pub fn is_boolean(self) -> bool {
        self != TaskKind::DataImputation
    }

    pub fn is_pair(self) -> bool {
        matches!(self, TaskKind::SchemaMatching | TaskKind::EntityMatching)
    }

    pub fn abbreviation(self) -> &'static str {
        match self {
            TaskKind::ErrorDetection => "ED",
            TaskKind::DataImputation => "DI",
            TaskKind::SchemaMatching => "SM",
            TaskKind::EntityMatching => "EM",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            TaskKind::ErrorDetection => "error detection",
            TaskKind::DataImputation => "data imputation",
            TaskKind::SchemaMatching => "schema matching",
            TaskKind::EntityMatching => "entity matching",
        };
        f.write_str(name)
    }
}

impl FromStr for TaskKind {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ed" | "error-detection" => Ok(TaskKind::ErrorDetection),
            "di" | "data-imputation" => Ok(TaskKind::DataImputation),
            "sm" | "schema-matching" => Ok(TaskKind::SchemaMatching),
            "em" | "entity-matching" => Ok(TaskKind::EntityMatching),
            other => Err(DataError::InvalidTask(format!(
                "unknown task kind `{other}`"
            ))),
        }
    }
}

/// A task kind plus, for error detection and imputation, the attribute under test.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTask", into = "RawTask")]
pub struct Task {
    kind: TaskKind,
    target_attribute: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawTask {
    kind: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_attribute: Option<String>,
}

impl TryFrom<RawTask> for Task {
    type Error = DataError;

    fn try_from(raw: RawTask) -> Result<Self> {
        Task::new(raw.kind, raw.target_attribute)
    }
}

impl From<Task> for RawTask {
    fn from(task: Task) -> Self {
        RawTask {
            kind: task.kind,
            target_attribute: task.target_attribute,
        }
    }
}

impl Task {
    pub fn new(kind: TaskKind, target_attribute: Option<String>) -> Result<Self> {
        match (kind.needs_target(), &target_attribute) {
            (true, None) => Err(DataError::InvalidTask(format!(
                "{kind} requires a target attribute"
            ))),
            (true, Some(t)) if t.is_empty() => Err(DataError::InvalidTask(
                "target attribute must not be empty".into(),
            )),
            (false, Some(_)) => Err(DataError::InvalidTask(format!(
                "{kind} does not take a target attribute"
            ))),
            _ => Ok(Task {
                kind,
                target_attribute,
            }),
        }
    }

    pub fn error_detection(attribute: impl Into<String>) -> Self {
        Task {
            kind: TaskKind::ErrorDetection,
            target_attribute: Some(attribute.into()),
        }
    }

    pub fn data_imputation(attribute: impl Into<String>) -> Self {
        Task {
            kind: TaskKind::DataImputation,
            target_attribute: Some(attribute.into()),
        }
    }

    pub fn schema_matching() -> Self {
        Task {
            kind: TaskKind::SchemaMatching,
            target_attribute: None,
        }
    }

    pub fn entity_matching() -> Self {
        Task {
            kind: TaskKind::EntityMatching,
            target_attribute: None,
        }
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    pub fn target(&self) -> Option<&str> {
        self.target_attribute.as_deref()
    }
}

/// One attribute of a record. `None` is a missing value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub name: String,
    pub value: Option<String>,
}

impl Cell {
    pub fn new(name: impl Into<String>, value: Option<&str>) -> Self {
        Cell {
            name: name.into(),
            value: value.map(str::to_owned),
        }
    }
}

/// An ordered set of attribute cells. Attribute order is the source column order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    id: String,
    cells: Vec<Cell>,
}

impl Record {
    pub fn new(id: impl Into<String>, cells: Vec<Cell>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(cells.len());
        for cell in &cells {
            if !seen.insert(cell.name.as_str()) {
                return Err(DataError::DuplicateAttribute(cell.name.clone()));
            }
        }
        Ok(Record {
            id: id.into(),
            cells,
        })
    }

    /// Convenience constructor from `(name, value)` pairs.
    pub fn from_pairs<'a, I>(id: impl Into<String>, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, Option<&'a str>)>,
    {
        let cells = pairs
            .into_iter()
            .map(|(name, value)| Cell::new(name, value))
            .collect();
        Record::new(id, cells)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn has_attribute(&self, name: &str) -> bool {
        self.cells.iter().any(|c| c.name == name)
    }

    /// `None` if the attribute does not exist, `Some(None)` if its value is missing.
    pub fn value(&self, name: &str) -> Option<Option<&str>> {
        self.cells
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.value.as_deref())
    }

    pub fn attribute_names(&self) -> impl Iterator<Item = &str> {
        self.cells.iter().map(|c| c.name.as_str())
    }

    /// Copy of the record with `name` blanked out.
    pub fn with_missing(&self, name: &str) -> Record {
        let mut out = self.clone();
        for cell in &mut out.cells {
            if cell.name == name {
                cell.value = None;
            }
        }
        out
    }

    fn project(&self, keep: &BTreeSet<String>) -> Result<Record> {
        if let Some(unknown) = keep.iter().find(|k| !self.has_attribute(k)) {
            return Err(DataError::UnknownAttribute(unknown.clone()));
        }
        Ok(Record {
            id: self.id.clone(),
            cells: self
                .cells
                .iter()
                .filter(|c| keep.contains(&c.name))
                .cloned()
                .collect(),
        })
    }

    fn has_schema_shape(&self) -> bool {
        self.cells.len() == SCHEMA_ATTRIBUTES.len()
            && self
                .cells
                .iter()
                .zip(SCHEMA_ATTRIBUTES)
                .all(|(c, expected)| c.name == expected)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Tuple(Record),
    AttributePair { left: Record, right: Record },
    TuplePair { left: Record, right: Record },
}

impl Payload {
    pub fn records(&self) -> Vec<&Record> {
        match self {
            Payload::Tuple(r) => vec![r],
            Payload::AttributePair { left, right } | Payload::TuplePair { left, right } => {
                vec![left, right]
            }
        }
    }

    pub fn fits(&self, kind: TaskKind) -> bool {
        matches!(
            (self, kind),
            (
                Payload::Tuple(_),
                TaskKind::ErrorDetection | TaskKind::DataImputation
            ) | (Payload::AttributePair { .. }, TaskKind::SchemaMatching)
                | (Payload::TuplePair { .. }, TaskKind::EntityMatching)
        )
    }

    fn map_records<F>(&self, mut f: F) -> Result<Payload>
    where
        F: FnMut(&Record) -> Result<Record>,
    {
        Ok(match self {
            Payload::Tuple(r) => Payload::Tuple(f(r)?),
            Payload::AttributePair { left, right } => Payload::AttributePair {
                left: f(left)?,
                right: f(right)?,
            },
            Payload::TuplePair { left, right } => Payload::TuplePair {
                left: f(left)?,
                right: f(right)?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Boolean(bool),
    Value(String),
}

impl Label {
    pub fn fits(&self, kind: TaskKind) -> bool {
        matches!(self, Label::Boolean(_)) == kind.is_boolean()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataInstance {
    pub id: String,
    pub payload: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Label>,
}

impl DataInstance {
    pub fn tuple(id: impl Into<String>, record: Record) -> Self {
        DataInstance {
            id: id.into(),
            payload: Payload::Tuple(record),
            gold: None,
        }
    }

    pub fn attribute_pair(id: impl Into<String>, left: Record, right: Record) -> Self {
        DataInstance {
            id: id.into(),
            payload: Payload::AttributePair { left, right },
            gold: None,
        }
    }

    pub fn tuple_pair(id: impl Into<String>, left: Record, right: Record) -> Self {
        DataInstance {
            id: id.into(),
            payload: Payload::TuplePair { left, right },
            gold: None,
        }
    }

    pub fn with_gold(mut self, gold: Label) -> Self {
        self.gold = Some(gold);
        self
    }

    /// Checks the payload shape, schema-matching record shape, target presence
    /// and gold label type against `task`.
    pub fn validate(&self, task: &Task) -> Result<()> {
        let kind = task.kind();
        if !self.payload.fits(kind) {
            return Err(DataError::PayloadTaskMismatch {
                id: self.id.clone(),
                kind,
            });
        }
        if kind == TaskKind::SchemaMatching
            && !self.payload.records().iter().all(|r| r.has_schema_shape())
        {
            return Err(DataError::SchemaShape {
                id: self.id.clone(),
            });
        }
        if let Some(target) = task.target() {
            if self
                .payload
                .records()
                .iter()
                .any(|r| !r.has_attribute(target))
            {
                return Err(DataError::MissingTargetAttribute(target.to_owned()));
            }
        }
        if let Some(gold) = &self.gold {
            if !gold.fits(kind) {
                return Err(DataError::LabelTaskMismatch {
                    id: self.id.clone(),
                    kind,
                });
            }
        }
        Ok(())
    }
}

/// Runs [`DataInstance::validate`] over a whole dataset.
pub fn validate_instances(instances: &[DataInstance], task: &Task) -> Result<()> {
    instances.iter().try_for_each(|i| i.validate(task))
}

/// Keeps only the attributes in `keep`, preserving source order.
pub fn project_features(
    instance: &DataInstance,
    keep: &BTreeSet<String>,
    task: &Task,
) -> Result<DataInstance> {
    if let Some(target) = task.target() {
        if !keep.contains(target) {
            return Err(DataError::TargetAttributeDropped(target.to_owned()));
        }
    }
    Ok(DataInstance {
        id: instance.id.clone(),
        payload: instance.payload.map_records(|r| r.project(keep))?,
        gold: instance.gold.clone(),
    })
}
