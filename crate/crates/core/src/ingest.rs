//! Loading datasets and gold labels from comma-separated files.
//!
//! Tuple tasks read one table; each data row becomes one instance. Pair tasks
//! either read one table whose columns carry `left_`/`right_` prefixes, or a
//! pairs file (`left_id,right_id[,label]`) that references rows of two tables
//! by their key column.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{
    Cell, DataError, DataInstance, Label, Payload, Record, Result, Task, TaskKind,
    SCHEMA_ATTRIBUTES,
};

const LEFT_PREFIX: &str = "left_";
const RIGHT_PREFIX: &str = "right_";
const LABEL_COLUMN: &str = "label";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum PairLayout {
    /// One file; attributes of the two sides are `left_<attr>` and `right_<attr>`.
    Prefixed,
    /// The dataset path is a pairs file referencing rows of two tables.
    Tables {
        left: PathBuf,
        right: PathBuf,
        #[serde(default = "default_key_column")]
        key_column: String,
    },
}

fn default_key_column() -> String {
    "id".to_owned()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub empty_is_missing: bool,
    pub pairs: PairLayout,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            empty_is_missing: true,
            pairs: PairLayout::Prefixed,
        }
    }
}

/// Name used as the prefix of instance ids: the file name of `path`.
pub fn source_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn instance_id(source: &str, row: usize) -> String {
    format!("{source}:{row}")
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })?;
    let csv_err = |source| DataError::Csv {
        path: path.to_owned(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut seen = std::collections::HashSet::new();
    for name in &header {
        if !seen.insert(name.as_str()) {
            return Err(DataError::DuplicateAttribute(name.clone()));
        }
    }
    let mut rows = Vec::new();
    for (row, result) in reader.records().enumerate() {
        let record = result.map_err(csv_err)?;
        if record.len() != header.len() {
            return Err(DataError::MalformedRow {
                path: path.to_owned(),
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        rows.push(record.iter().map(str::to_owned).collect());
    }
    Ok(Table { header, rows })
}

fn cell_value(raw: &str, options: &IngestOptions) -> Option<String> {
    if raw.is_empty() && options.empty_is_missing {
        None
    } else {
        Some(raw.to_owned())
    }
}

fn parse_boolean(id: &str, token: &str) -> Result<bool> {
    match token.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(DataError::UnknownLabelToken {
            id: id.to_owned(),
            token: other.to_owned(),
        }),
    }
}

/// Reorders a schema-matching record to `name, description`; any other shape
/// is rejected.
fn schema_record(record: Record, instance: &str) -> Result<Record> {
    let mut cells = Vec::with_capacity(SCHEMA_ATTRIBUTES.len());
    for attr in SCHEMA_ATTRIBUTES {
        match record.cells().iter().find(|c| c.name == attr) {
            Some(cell) => cells.push(cell.clone()),
            None => {
                return Err(DataError::SchemaShape {
                    id: instance.to_owned(),
                })
            }
        }
    }
    if record.len() != SCHEMA_ATTRIBUTES.len() {
        return Err(DataError::SchemaShape {
            id: instance.to_owned(),
        });
    }
    Record::new(record.id(), cells)
}

fn pair_payload(kind: TaskKind, left: Record, right: Record, id: &str) -> Result<Payload> {
    match kind {
        TaskKind::SchemaMatching => Ok(Payload::AttributePair {
            left: schema_record(left, id)?,
            right: schema_record(right, id)?,
        }),
        TaskKind::EntityMatching => Ok(Payload::TuplePair { left, right }),
        _ => unreachable!("pair payload requested for a tuple task"),
    }
}

/// Loads every row of `path` as a data instance for `task`, in file order.
pub fn load_dataset(
    path: &Path,
    task: &Task,
    options: &IngestOptions,
) -> Result<Vec<DataInstance>> {
    match task.kind() {
        TaskKind::ErrorDetection | TaskKind::DataImputation => load_tuples(path, task, options),
        TaskKind::SchemaMatching | TaskKind::EntityMatching => match &options.pairs {
            PairLayout::Prefixed => load_prefixed_pairs(path, task, options),
            PairLayout::Tables {
                left,
                right,
                key_column,
            } => load_table_pairs(path, left, right, key_column, task, options),
        },
    }
}

fn load_tuples(path: &Path, task: &Task, options: &IngestOptions) -> Result<Vec<DataInstance>> {
    let table = read_table(path)?;
    if let Some(target) = task.target() {
        if !table.header.iter().any(|h| h == target) {
            return Err(DataError::MissingTargetAttribute(target.to_owned()));
        }
    }
    let source = source_name(path);
    table
        .rows
        .iter()
        .enumerate()
        .map(|(row, values)| {
            let id = instance_id(&source, row);
            let cells = table
                .header
                .iter()
                .zip(values)
                .map(|(name, raw)| Cell {
                    name: name.clone(),
                    value: cell_value(raw, options),
                })
                .collect();
            Ok(DataInstance::tuple(id.clone(), Record::new(id, cells)?))
        })
        .collect()
}

fn load_prefixed_pairs(
    path: &Path,
    task: &Task,
    options: &IngestOptions,
) -> Result<Vec<DataInstance>> {
    let table = read_table(path)?;
    let side = |prefix: &str| -> Vec<(usize, String)> {
        table
            .header
            .iter()
            .enumerate()
            .filter_map(|(i, h)| h.strip_prefix(prefix).map(|n| (i, n.to_owned())))
            .collect()
    };
    let left_cols = side(LEFT_PREFIX);
    let right_cols = side(RIGHT_PREFIX);
    for (cols, prefix) in [(&left_cols, LEFT_PREFIX), (&right_cols, RIGHT_PREFIX)] {
        if cols.is_empty() {
            return Err(DataError::MissingColumn {
                path: path.to_owned(),
                column: format!("{prefix}*"),
            });
        }
    }
    let label_col = table.header.iter().position(|h| h == LABEL_COLUMN);

    let source = source_name(path);
    let build = |id: &str, suffix: &str, cols: &[(usize, String)], values: &[String]| {
        let cells = cols
            .iter()
            .map(|(i, name)| Cell {
                name: name.clone(),
                value: cell_value(&values[*i], options),
            })
            .collect();
        Record::new(format!("{id}/{suffix}"), cells)
    };
    table
        .rows
        .iter()
        .enumerate()
        .map(|(row, values)| {
            let id = instance_id(&source, row);
            let left = build(&id, "left", &left_cols, values)?;
            let right = build(&id, "right", &right_cols, values)?;
            let gold = match label_col {
                Some(c) if !values[c].trim().is_empty() => {
                    Some(Label::Boolean(parse_boolean(&id, &values[c])?))
                }
                _ => None,
            };
            Ok(DataInstance {
                payload: pair_payload(task.kind(), left, right, &id)?,
                id,
                gold,
            })
        })
        .collect()
}

/// Rows of a side table keyed by `key_column` (or by row index when the
/// table has no such column). The key column is not part of the record.
fn load_keyed_table(
    path: &Path,
    key_column: &str,
    options: &IngestOptions,
) -> Result<HashMap<String, Record>> {
    let table = read_table(path)?;
    let key_idx = table.header.iter().position(|h| h == key_column);
    let source = source_name(path);
    let mut out = HashMap::with_capacity(table.rows.len());
    for (row, values) in table.rows.iter().enumerate() {
        let key = match key_idx {
            Some(k) => values[k].clone(),
            None => row.to_string(),
        };
        let cells = table
            .header
            .iter()
            .zip(values)
            .enumerate()
            .filter(|(i, _)| Some(*i) != key_idx)
            .map(|(_, (name, raw))| Cell {
                name: name.clone(),
                value: cell_value(raw, options),
            })
            .collect();
        let record = Record::new(format!("{source}#{key}"), cells)?;
        if out.insert(key.clone(), record).is_some() {
            return Err(DataError::DuplicateAttribute(format!("{key_column}={key}")));
        }
    }
    Ok(out)
}

fn load_table_pairs(
    pairs_path: &Path,
    left_path: &Path,
    right_path: &Path,
    key_column: &str,
    task: &Task,
    options: &IngestOptions,
) -> Result<Vec<DataInstance>> {
    let left = load_keyed_table(left_path, key_column, options)?;
    let right = load_keyed_table(right_path, key_column, options)?;
    let pairs = read_table(pairs_path)?;
    if pairs.header.len() < 2 || pairs.header.len() > 3 {
        return Err(DataError::MalformedRow {
            path: pairs_path.to_owned(),
            row: 0,
            expected: 3,
            found: pairs.header.len(),
        });
    }
    let source = source_name(pairs_path);
    let lookup = |table: &HashMap<String, Record>, key: &str| {
        table
            .get(key)
            .cloned()
            .ok_or_else(|| DataError::UnknownRecordId {
                path: pairs_path.to_owned(),
                id: key.to_owned(),
            })
    };
    pairs
        .rows
        .iter()
        .enumerate()
        .map(|(row, values)| {
            let id = instance_id(&source, row);
            let l = lookup(&left, &values[0])?;
            let r = lookup(&right, &values[1])?;
            let gold = match values.get(2) {
                Some(token) if !token.trim().is_empty() => {
                    Some(Label::Boolean(parse_boolean(&id, token)?))
                }
                _ => None,
            };
            Ok(DataInstance {
                payload: pair_payload(task.kind(), l, r, &id)?,
                id,
                gold,
            })
        })
        .collect()
}

/// Reads an `id,label` file. A leading `id,label` header row is skipped.
pub fn load_labels(path: &Path, task: &Task) -> Result<BTreeMap<String, Label>> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut labels = BTreeMap::new();
    for (row, result) in reader.records().enumerate() {
        let record = result.map_err(|source| DataError::Csv {
            path: path.to_owned(),
            source,
        })?;
        if record.len() != 2 {
            return Err(DataError::MalformedLabelRow {
                path: path.to_owned(),
                row,
            });
        }
        let (id, raw) = (record[0].trim(), &record[1]);
        if row == 0 && id == "id" && raw.trim() == LABEL_COLUMN {
            continue;
        }
        let label = if task.kind().is_boolean() {
            Label::Boolean(parse_boolean(id, raw)?)
        } else {
            Label::Value(raw.trim().to_owned())
        };
        labels.insert(id.to_owned(), label);
    }
    Ok(labels)
}

/// Sets the gold label of every instance that has an entry in `labels`.
/// Returns how many instances received a label.
pub fn attach_labels(instances: &mut [DataInstance], labels: &BTreeMap<String, Label>) -> usize {
    let mut attached = 0;
    for instance in instances {
        if let Some(label) = labels.get(&instance.id) {
            instance.gold = Some(label.clone());
            attached += 1;
        }
    }
    attached
}
