//! Token and cost reporting, and the batch amortization model.
//!
//! A batch of `B` questions pays the shared instruction block (persona,
//! task specification, few-shot examples) once, so a run over `N` instances
//! costs `Σ q_i + ⌈N/B⌉·I` prompt tokens, where `I` is the instruction size and
//! `q_i` the size of question `i`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::gateway::{prompt_tokens, Cost, MeterSnapshot, Prices, TokenCounter};
use crate::model::DataInstance;
use crate::prompt::{assemble, question_body, PromptConfig, PromptError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmortizationModel {
    /// Tokens shared by every request of the run.
    pub instruction_tokens: u64,
    /// Tokens of each question line, measured as question 1.
    pub question_tokens: Vec<u64>,
}

impl AmortizationModel {
    pub fn new(instruction_tokens: u64, question_tokens: Vec<u64>) -> Self {
        AmortizationModel {
            instruction_tokens,
            question_tokens,
        }
    }

    /// Measures `I` and every `q_i` with `counter`. Question numbering beyond
    /// nine adds a digit to the line, which the model ignores.
    pub fn measure(
        config: &PromptConfig,
        instances: &[DataInstance],
        counter: &dyn TokenCounter,
    ) -> Result<Self, PromptError> {
        let Some(first) = instances.first() else {
            return Ok(AmortizationModel::new(0, Vec::new()));
        };
        let mut bundle = assemble(config, std::slice::from_ref(first))?;
        bundle.messages.pop();
        let instruction_tokens = prompt_tokens(counter, &bundle.messages);
        let question_tokens = instances
            .iter()
            .map(|i| {
                question_body(i, &config.task).map(|b| counter.count(&format!("Question 1: {b}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(AmortizationModel {
            instruction_tokens,
            question_tokens,
        })
    }

    pub fn instances(&self) -> usize {
        self.question_tokens.len()
    }

    pub fn mean_question_tokens(&self) -> f64 {
        if self.question_tokens.is_empty() {
            0.0
        } else {
            self.question_tokens.iter().sum::<u64>() as f64 / self.question_tokens.len() as f64
        }
    }

    pub fn batches(&self, batch_size: usize) -> u64 {
        self.instances().div_ceil(batch_size.max(1)) as u64
    }

    pub fn predicted_prompt_tokens(&self, batch_size: usize) -> u64 {
        self.question_tokens.iter().sum::<u64>()
            + self.batches(batch_size) * self.instruction_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub tokens_per_instance: f64,
    pub cost: Cost,
    pub wall_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_prompt_tokens: Option<u64>,
}

pub fn cost_report(
    meter: &MeterSnapshot,
    instances: usize,
    wall_time: Duration,
    model: Option<(&AmortizationModel, usize)>,
) -> CostReport {
    let total = meter.total_tokens();
    CostReport {
        prompt_tokens: meter.prompt_tokens,
        completion_tokens: meter.completion_tokens,
        total_tokens: total,
        tokens_per_instance: if instances == 0 {
            0.0
        } else {
            total as f64 / instances as f64
        },
        cost: meter.cost,
        wall_time_ms: wall_time.as_millis() as u64,
        predicted_prompt_tokens: model.map(|(m, b)| m.predicted_prompt_tokens(b)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub batch_size: usize,
    pub batches: u64,
    pub prompt_tokens: u64,
    pub tokens_per_instance: f64,
    /// Prompt-side cost only; completions are not predictable up front.
    pub cost: Cost,
}

pub fn estimate_table(
    model: &AmortizationModel,
    sizes: &[usize],
    prices: Prices,
) -> Vec<EstimateRow> {
    sizes
        .iter()
        .map(|&b| {
            let tokens = model.predicted_prompt_tokens(b);
            EstimateRow {
                batch_size: b,
                batches: model.batches(b),
                prompt_tokens: tokens,
                tokens_per_instance: if model.instances() == 0 {
                    0.0
                } else {
                    tokens as f64 / model.instances() as f64
                },
                cost: prices.cost(tokens, 0),
            }
        })
        .collect()
}
