//! Run reports and their text and CSV renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{percent, AblationCell, Counts, Metric};
use crate::batching::BatchMode;
use crate::gateway::{BackendKind, Cost};
use crate::model::Task;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub prompt: u64,
    pub completion: u64,
}

impl TokenTotals {
    pub fn total(&self) -> u64 {
        self.prompt + self.completion
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub model: String,
    pub backend: BackendKind,
    pub batch_mode: BatchMode,
    pub batch_size: usize,
    pub seed: u64,
    pub reasoning: bool,
    pub few_shots: usize,
    pub instances: usize,
    pub batches: usize,
    pub metric: Metric,
    pub counts: Counts,
    /// A metric denominator was zero and the metric was reported as 0.
    pub degenerate: bool,
    pub tokens: TokenTotals,
    pub tokens_per_instance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_prompt_tokens: Option<u64>,
    pub cost: Cost,
    pub wall_time_ms: u64,
    pub config_fingerprint: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// JSON without the wall-clock time; equal for identical replayed runs.
    pub fn deterministic_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("wall_time_ms");
        }
        serde_json::to_string(&value).expect("report serializes")
    }

    pub fn parse_failure_rate(&self) -> f64 {
        if self.instances == 0 {
            0.0
        } else {
            self.counts.parse_failures as f64 / self.instances as f64
        }
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let kind = self.task.kind();
        let task = match self.task.target() {
            Some(t) => format!("{} ({kind}, target \"{t}\")", kind.abbreviation()),
            None => format!("{} ({kind})", kind.abbreviation()),
        };
        let mode = match self.batch_mode {
            BatchMode::Random => "random",
            BatchMode::Cluster => "cluster",
        };
        let backend = match self.backend {
            BackendKind::Http => "http",
            BackendKind::Mock => "mock",
            BackendKind::Replay => "replay",
        };
        let c = &self.counts;
        let _ = writeln!(out, "{:<12}{task}", "task");
        let _ = writeln!(out, "{:<12}{} via {backend}", "model", self.model);
        let _ = writeln!(
            out,
            "{:<12}{} in {} batches of up to {} ({mode}, seed {})",
            "instances", self.instances, self.batches, self.batch_size, self.seed
        );
        let _ = writeln!(
            out,
            "{:<12}reasoning {}, {} few-shot examples",
            "prompt",
            if self.reasoning { "on" } else { "off" },
            self.few_shots
        );
        match self.metric {
            Metric::Accuracy { accuracy } => {
                let _ = writeln!(out, "{:<12}{}%", "accuracy", percent(accuracy));
                let _ = writeln!(
                    out,
                    "{:<12}correct {}  incorrect {}  ambiguous {}  parse failures {}",
                    "counts", c.correct, c.incorrect, c.ambiguous, c.parse_failures
                );
            }
            Metric::Prf {
                precision,
                recall,
                f1,
            } => {
                let _ = writeln!(
                    out,
                    "{:<12}{}%  (precision {}%, recall {}%)",
                    "F1",
                    percent(f1),
                    percent(precision),
                    percent(recall)
                );
                let _ = writeln!(
                    out,
                    "{:<12}tp {}  fp {}  fn {}  tn {}  ambiguous {}  parse failures {}",
                    "counts", c.tp, c.fp, c.fn_, c.tn, c.ambiguous, c.parse_failures
                );
            }
        }
        let _ = writeln!(
            out,
            "{:<12}prompt {}  completion {}  total {}  per instance {:.1}",
            "tokens",
            self.tokens.prompt,
            self.tokens.completion,
            self.tokens.total(),
            self.tokens_per_instance
        );
        if let Some(predicted) = self.predicted_prompt_tokens {
            let _ = writeln!(out, "{:<12}{predicted} prompt tokens", "predicted");
        }
        let _ = writeln!(out, "{:<12}{}", "cost", self.cost);
        let _ = writeln!(
            out,
            "{:<12}{:.2} s",
            "wall time",
            self.wall_time_ms as f64 / 1000.0
        );
        if c.ambiguous + c.parse_failures > 0 {
            out.push_str(
                "note: ambiguous and unparseable answers are scored as wrong predictions\n",
            );
        }
        if self.degenerate {
            out.push_str("note: a metric denominator was zero; that metric is reported as 0\n");
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

pub fn ablation_table(cells: &[AblationCell]) -> String {
    let mut out = String::new();
    let width = cells
        .iter()
        .map(|c| c.components.to_string().len())
        .max()
        .unwrap_or(0)
        .max("components".len());
    let metric = cells
        .first()
        .map_or("metric", |c| c.report.metric.headline_name());
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>10}  {:>10}  {:>10}",
        "components", metric, "prompt", "completion", "cost"
    );
    for cell in cells {
        let r = &cell.report;
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>10}  {:>10}  {:>10}",
            cell.components.to_string(),
            percent(r.metric.headline()),
            r.tokens.prompt,
            r.tokens.completion,
            r.cost.to_string()
        );
    }
    out
}

pub fn ablation_csv(cells: &[AblationCell]) -> Result<String, csv::Error> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "components",
        "metric",
        "value_pct",
        "prompt_tokens",
        "completion_tokens",
        "cost",
    ])?;
    for cell in cells {
        let r = &cell.report;
        writer.write_record([
            cell.components.to_string(),
            r.metric.headline_name().to_owned(),
            percent(r.metric.headline()),
            r.tokens.prompt.to_string(),
            r.tokens.completion.to_string(),
            r.cost.to_string(),
        ])?;
    }
    let bytes = writer.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
pub(crate) fn sample_report() -> EvalReport {
    EvalReport {
        task: Task::entity_matching(),
        model: "gpt-4".into(),
        backend: BackendKind::Replay,
        batch_mode: BatchMode::Random,
        batch_size: 10,
        seed: 7,
        reasoning: true,
        few_shots: 0,
        instances: 4,
        batches: 1,
        metric: Metric::Prf {
            precision: 0.5,
            recall: 1.0,
            f1: 2.0 / 3.0,
        },
        counts: Counts {
            tp: 2,
            fp: 2,
            ..Counts::default()
        },
        degenerate: false,
        tokens: TokenTotals {
            prompt: 120,
            completion: 30,
        },
        tokens_per_instance: 37.5,
        predicted_prompt_tokens: None,
        cost: Cost::from_nano(0),
        wall_time_ms: 1234,
        config_fingerprint: "abc".into(),
        warnings: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_json_drops_wall_time() {
        let a = sample_report();
        let mut b = a.clone();
        b.wall_time_ms = 99;
        assert_eq!(a.deterministic_json(), b.deterministic_json());
        assert!(!a.deterministic_json().contains("wall_time"));
    }

    #[test]
    fn table_shows_percentages() {
        let text = sample_report().render_table();
        assert!(text.contains("66.7%"), "{text}");
        assert!(text.contains("precision 50.0%"));
        assert!(text.contains("recall 100.0%"));
    }

    #[test]
    fn report_round_trips_through_json() {
        let r = sample_report();
        let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
