//! One evaluation run: plan batches, assemble prompts, send them through a
//! gateway, parse the answers and score them.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::batching::{
    default_cluster_count, embed_all, plan_cluster, plan_random, BatchMode, BatchPlan,
    BatchingError, Embedder, HashEmbedder,
};
use crate::eval::{
    cost_report, score, AmortizationModel, EvalError, EvalReport, Outcome, Prediction, TokenTotals,
};
use crate::gateway::{ChatRequest, ChatResponse, Gateway, GatewayError};
use crate::model::{DataError, DataInstance, Label};
use crate::parser::{parse_batch_response_with, ParseFailure, ParseOptions, ParsedAnswer};
use crate::prompt::{assemble, PromptBundle, PromptConfig, PromptError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Batching(#[from] BatchingError),
    #[error("batch {batch}: {source}")]
    Gateway {
        batch: usize,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("batch plan names unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("instance `{0}` has no gold label")]
    MissingGold(String),
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchingSpec {
    pub mode: BatchMode,
    pub batch_size: usize,
    pub seed: u64,
    /// Cluster count for cluster mode; defaults to ⌈N / 4B⌉.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
}

impl Default for BatchingSpec {
    fn default() -> Self {
        BatchingSpec {
            mode: BatchMode::Random,
            batch_size: 8,
            seed: 0,
            clusters: None,
        }
    }
}

/// Everything a run needs, already loaded and resolved.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub prompt: PromptConfig,
    pub instances: Vec<DataInstance>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub batching: BatchingSpec,
    pub strict_parsing: bool,
    pub workers: usize,
}

impl Experiment {
    pub fn new(
        prompt: PromptConfig,
        instances: Vec<DataInstance>,
        model: impl Into<String>,
    ) -> Self {
        Experiment {
            prompt,
            instances,
            model: model.into(),
            temperature: crate::gateway::DEFAULT_TEMPERATURE,
            max_tokens: None,
            batching: BatchingSpec::default(),
            strict_parsing: false,
            workers: 1,
        }
    }

    pub fn request(&self, bundle: &PromptBundle) -> ChatRequest {
        let mut request = ChatRequest::from_bundle(&self.model, bundle);
        request.temperature = self.temperature;
        request.max_tokens = self.max_tokens;
        request
    }

    fn gold(&self) -> Result<BTreeMap<String, Label>, PipelineError> {
        self.instances
            .iter()
            .map(|i| match &i.gold {
                Some(g) => Ok((i.id.clone(), g.clone())),
                None => Err(PipelineError::MissingGold(i.id.clone())),
            })
            .collect()
    }
}

pub fn plan_batches(
    experiment: &Experiment,
    embedder: Option<&dyn Embedder>,
) -> Result<BatchPlan, PipelineError> {
    let ids: Vec<String> = experiment.instances.iter().map(|i| i.id.clone()).collect();
    let spec = &experiment.batching;
    let plan = match spec.mode {
        BatchMode::Random => plan_random(&ids, spec.batch_size, spec.seed)?,
        BatchMode::Cluster => {
            let fallback = HashEmbedder::default();
            let embedder = embedder.unwrap_or(&fallback);
            let vectors = embed_all(&experiment.instances, &experiment.prompt.task, embedder)?;
            let k = spec
                .clusters
                .unwrap_or_else(|| default_cluster_count(ids.len(), spec.batch_size));
            plan_cluster(&ids, &vectors, spec.batch_size, k, spec.seed)?
        }
    };
    Ok(plan)
}

pub fn assemble_batches(
    experiment: &Experiment,
    plan: &BatchPlan,
) -> Result<Vec<PromptBundle>, PipelineError> {
    let by_id: HashMap<&str, &DataInstance> = experiment
        .instances
        .iter()
        .map(|i| (i.id.as_str(), i))
        .collect();
    plan.batches
        .iter()
        .map(|batch| {
            let members = batch
                .iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|i| (*i).clone())
                        .ok_or_else(|| PipelineError::UnknownInstance(id.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(assemble(&experiment.prompt, &members)?)
        })
        .collect()
}

/// SHA-256 over the model settings, batching spec and every prompt.
pub fn fingerprint(experiment: &Experiment, bundles: &[PromptBundle]) -> String {
    let value = serde_json::json!({
        "model": experiment.model,
        "temperature": experiment.temperature,
        "max_tokens": experiment.max_tokens,
        "batching": experiment.batching,
        "prompts": bundles.iter().map(|b| &b.messages).collect::<Vec<_>>(),
    });
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub index: usize,
    pub instance_ids: Vec<String>,
    pub response: ChatResponse,
    pub parsed: Result<Vec<ParsedAnswer>, ParseFailure>,
}

/// Sends every bundle through `gateway` on up to `experiment.workers`
/// threads. Results come back ordered by batch index. The first gateway error
/// stops dispatch of further batches and is returned once in-flight batches
/// finish; `on_done` has by then been called for every completed batch.
pub fn send_batches(
    experiment: &Experiment,
    bundles: &[PromptBundle],
    gateway: &Gateway,
    on_done: &(dyn Fn(&BatchResult) + Sync),
) -> Result<Vec<BatchResult>, PipelineError> {
    let options = ParseOptions {
        reasoning_enabled: experiment.prompt.reasoning_enabled,
        strict: experiment.strict_parsing,
    };
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let results: Mutex<Vec<Option<BatchResult>>> = Mutex::new(vec![None; bundles.len()]);
    let failure: Mutex<Option<PipelineError>> = Mutex::new(None);
    let workers = experiment.workers.clamp(1, bundles.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let index = next.fetch_add(1, Ordering::SeqCst);
                let Some(bundle) = bundles.get(index) else {
                    break;
                };
                match gateway.send(&experiment.request(bundle)) {
                    Ok(response) => {
                        let parsed = parse_batch_response_with(
                            &response.content,
                            bundle.question_count,
                            &experiment.prompt.task,
                            options,
                        );
                        if let Err(e) = &parsed {
                            log::warn!("batch {index}: {e}");
                        }
                        let result = BatchResult {
                            index,
                            instance_ids: bundle.instance_ids.clone(),
                            response,
                            parsed,
                        };
                        on_done(&result);
                        results.lock().unwrap()[index] = Some(result);
                    }
                    Err(source) => {
                        stop.store(true, Ordering::SeqCst);
                        let mut slot = failure.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(PipelineError::Gateway {
                                batch: index,
                                source,
                            });
                        }
                        break;
                    }
                }
            });
        }
    });

    if let Some(err) = failure.into_inner().unwrap() {
        return Err(err);
    }
    Ok(results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every batch completed"))
        .collect())
}

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub batch: usize,
    pub question: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_answer: Option<String>,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Label>,
}

impl PredictionRecord {
    pub fn prediction(&self) -> Prediction {
        Prediction {
            instance_id: self.instance_id.clone(),
            outcome: self.outcome.clone(),
        }
    }
}

pub fn prediction_records(
    results: &[BatchResult],
    gold: &BTreeMap<String, Label>,
) -> Vec<PredictionRecord> {
    let mut out = Vec::new();
    for result in results {
        for (pos, id) in result.instance_ids.iter().enumerate() {
            let question = pos + 1;
            let answer = result
                .parsed
                .as_ref()
                .ok()
                .and_then(|answers| answers.iter().find(|a| a.question_index == question));
            let outcome = match answer {
                None => Outcome::ParseFailure,
                Some(a) => match &a.normalized {
                    Some(v) => Outcome::Answer(v.clone()),
                    None => Outcome::Ambiguous,
                },
            };
            out.push(PredictionRecord {
                instance_id: id.clone(),
                batch: result.index,
                question,
                reason: answer.and_then(|a| a.reason.clone()),
                raw_answer: answer.map(|a| a.raw_answer.clone()),
                outcome,
                gold: gold.get(id).cloned(),
            });
        }
    }
    out
}

pub struct RunOutcome {
    pub plan: BatchPlan,
    pub bundles: Vec<PromptBundle>,
    pub results: Vec<BatchResult>,
    pub predictions: Vec<PredictionRecord>,
    pub report: EvalReport,
}

/// Everything before sending: the plan, its prompts and their fingerprint.
pub struct Prepared {
    pub plan: BatchPlan,
    pub bundles: Vec<PromptBundle>,
    pub fingerprint: String,
}

pub fn prepare(
    experiment: &Experiment,
    embedder: Option<&dyn Embedder>,
) -> Result<Prepared, PipelineError> {
    experiment.prompt.validate()?;
    crate::model::validate_instances(&experiment.instances, &experiment.prompt.task)?;
    let plan = plan_batches(experiment, embedder)?;
    let bundles = assemble_batches(experiment, &plan)?;
    let fingerprint = fingerprint(experiment, &bundles);
    Ok(Prepared {
        plan,
        bundles,
        fingerprint,
    })
}

/// Scores finished batches and builds the report. `gateway` supplies the
/// meter and token counter.
pub fn finish(
    experiment: &Experiment,
    prepared: Prepared,
    results: Vec<BatchResult>,
    gateway: &Gateway,
    wall_time: Duration,
) -> Result<RunOutcome, PipelineError> {
    let gold = experiment.gold()?;
    let predictions = prediction_records(&results, &gold);
    let scored: Vec<Prediction> = predictions
        .iter()
        .map(PredictionRecord::prediction)
        .collect();
    let score = score(&scored, &gold, &experiment.prompt.task)?;
    let model = AmortizationModel::measure(
        &experiment.prompt,
        &experiment.instances,
        gateway.token_counter(),
    )?;
    let costs = cost_report(
        &gateway.meter().snapshot(),
        experiment.instances.len(),
        wall_time,
        Some((&model, experiment.batching.batch_size)),
    );
    let report = EvalReport {
        task: experiment.prompt.task.clone(),
        model: experiment.model.clone(),
        backend: gateway.backend_kind(),
        batch_mode: prepared.plan.mode,
        batch_size: prepared.plan.batch_size,
        seed: prepared.plan.seed,
        reasoning: experiment.prompt.reasoning_enabled,
        few_shots: experiment.prompt.few_shots.len(),
        instances: experiment.instances.len(),
        batches: prepared.plan.len(),
        metric: score.metric,
        counts: score.counts,
        degenerate: score.degenerate,
        tokens: TokenTotals {
            prompt: costs.prompt_tokens,
            completion: costs.completion_tokens,
        },
        tokens_per_instance: costs.tokens_per_instance,
        predicted_prompt_tokens: costs.predicted_prompt_tokens,
        cost: costs.cost,
        wall_time_ms: costs.wall_time_ms,
        config_fingerprint: prepared.fingerprint,
        warnings: Vec::new(),
    };
    Ok(RunOutcome {
        plan: prepared.plan,
        bundles: prepared.bundles,
        results,
        predictions,
        report,
    })
}

/// Prepare, send, parse and score in one go.
pub fn run(
    experiment: &Experiment,
    gateway: &Gateway,
    embedder: Option<&dyn Embedder>,
) -> Result<RunOutcome, PipelineError> {
    let clock = Instant::now();
    let prepared = prepare(experiment, embedder)?;
    let results = send_batches(experiment, &prepared.bundles, gateway, &|_| {})?;
    finish(experiment, prepared, results, gateway, clock.elapsed())
}
