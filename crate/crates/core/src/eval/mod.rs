//! Scoring predictions against gold labels.
//!
//! Imputation is scored by accuracy; the yes/no tasks by precision, recall and
//! F1 over the positive class. Answers that could not be parsed or normalized
//! stay in the denominator: they count as the wrong prediction for their gold
//! label, i.e. a missed positive or a false alarm on a negative.

mod ablation;
mod cost;
mod report;

pub use ablation::{
    apply_components, run_ablation, standard_grid, AblationCell, Component, ComponentSet,
};
pub use cost::{cost_report, estimate_table, AmortizationModel, CostReport, EstimateRow};
pub use report::{ablation_csv, ablation_table, EvalReport, TokenTotals};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Label, Task};
use crate::parser::AnswerValue;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no gold label for instance `{0}`")]
    MissingGold(String),
    #[error("gold label of `{0}` does not fit the task")]
    GoldTaskMismatch(String),
    #[error("component set `{0}` lacks the zero-shot task specification (ZS-T)")]
    MissingBase(String),
    #[error("unknown ablation component `{0}`")]
    UnknownComponent(String),
    #[error("component set `{0}` needs few-shot examples but none are configured")]
    FewShotsRequired(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum Outcome {
    Answer(AnswerValue),
    /// Answer present but not normalizable (e.g. neither yes nor no).
    Ambiguous,
    /// The batch response could not be split into answers.
    ParseFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub outcome: Outcome,
}

impl Prediction {
    pub fn answer(id: impl Into<String>, value: AnswerValue) -> Self {
        Prediction {
            instance_id: id.into(),
            outcome: Outcome::Answer(value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Accuracy {
        accuracy: f64,
    },
    Prf {
        precision: f64,
        recall: f64,
        f1: f64,
    },
}

impl Metric {
    /// Accuracy for imputation, F1 otherwise.
    pub fn headline(&self) -> f64 {
        match self {
            Metric::Accuracy { accuracy } => *accuracy,
            Metric::Prf { f1, .. } => *f1,
        }
    }

    pub fn headline_name(&self) -> &'static str {
        match self {
            Metric::Accuracy { .. } => "accuracy",
            Metric::Prf { .. } => "F1",
        }
    }
}

/// Percentage with one decimal, e.g. `66.7`.
pub fn percent(value: f64) -> String {
    format!("{:.1}", value * 100.0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub correct: u64,
    pub incorrect: u64,
    pub ambiguous: u64,
    pub parse_failures: u64,
    /// Ambiguous or parse-failed answers whose gold label is positive.
    pub failures_on_positive: u64,
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.tp
            + self.fp
            + self.fn_
            + self.tn
            + self.correct
            + self.incorrect
            + self.ambiguous
            + self.parse_failures
    }

    fn failures(&self) -> u64 {
        self.ambiguous + self.parse_failures
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub metric: Metric,
    pub counts: Counts,
    /// A metric had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Lowercase with internal whitespace collapsed.
pub fn canonical_value(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn score(
    predictions: &[Prediction],
    gold: &BTreeMap<String, Label>,
    task: &Task,
) -> Result<Score, EvalError> {
    let boolean = task.kind().is_boolean();
    let mut counts = Counts::default();
    for p in predictions {
        let label = gold
            .get(&p.instance_id)
            .ok_or_else(|| EvalError::MissingGold(p.instance_id.clone()))?;
        if !label.fits(task.kind()) {
            return Err(EvalError::GoldTaskMismatch(p.instance_id.clone()));
        }
        match (&p.outcome, label) {
            (Outcome::Ambiguous | Outcome::ParseFailure, _) => {
                if p.outcome == Outcome::Ambiguous {
                    counts.ambiguous += 1;
                } else {
                    counts.parse_failures += 1;
                }
                if *label == Label::Boolean(true) {
                    counts.failures_on_positive += 1;
                }
            }
            (Outcome::Answer(AnswerValue::Boolean(pred)), Label::Boolean(truth)) => {
                match (pred, truth) {
                    (true, true) => counts.tp += 1,
                    (true, false) => counts.fp += 1,
                    (false, true) => counts.fn_ += 1,
                    (false, false) => counts.tn += 1,
                }
            }
            (Outcome::Answer(AnswerValue::Value(pred)), Label::Value(truth)) => {
                if canonical_value(pred) == canonical_value(truth) {
                    counts.correct += 1;
                } else {
                    counts.incorrect += 1;
                }
            }
            // an answer of the wrong type is a wrong answer
            (Outcome::Answer(_), Label::Boolean(truth)) => {
                counts.ambiguous += 1;
                if *truth {
                    counts.failures_on_positive += 1;
                }
            }
            (Outcome::Answer(_), Label::Value(_)) => counts.incorrect += 1,
        }
    }

    if boolean {
        let failures_on_negative = counts.failures() - counts.failures_on_positive;
        let (precision, dp) = ratio(counts.tp, counts.tp + counts.fp + failures_on_negative);
        let (recall, dr) = ratio(
            counts.tp,
            counts.tp + counts.fn_ + counts.failures_on_positive,
        );
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Ok(Score {
            metric: Metric::Prf {
                precision,
                recall,
                f1,
            },
            counts,
            degenerate: dp || dr,
        })
    } else {
        let (accuracy, degenerate) = ratio(counts.correct, counts.total());
        Ok(Score {
            metric: Metric::Accuracy { accuracy },
            counts,
            degenerate,
        })
    }
}
