//! Prompt assembly.
//!
//! Every prompt is a chat transcript of the form
//!
//! ```text
//! system:    persona line
//! user:      task specification + answer format (+ ED/DI extras)
//! user:      few-shot questions          (optional)
//! assistant: few-shot answers            (optional)
//! user:      numbered batch questions
//! ```
//!
//! All task-dependent phrasings live in the functions at the top of this
//! module so they can be revised in one place.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{serialize_record, ContextError};
use crate::model::{DataInstance, Payload, Record, Task, TaskKind};

pub const PERSONA: &str = "You are a database engineer.";
pub const TWO_LINE_RULE: &str = "MUST answer each question in two lines.";
pub const CONFIRM_TARGET: &str =
    "Please confirm the target attribute in your reason for inference.";
pub const ANSWER_HEADER_RULE: &str =
    "Start each answer with \"Answer k:\" on its own line, where k is the question number.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("at least one few-shot example is required")]
    EmptyFewShots,
    #[error("a batch must contain at least one instance")]
    EmptyBatch,
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("invalid prompt configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid few-shot example: {0}")]
    InvalidExample(String),
}

type Result<T> = std::result::Result<T, PromptError>;

fn task_specification(task: &Task) -> String {
    match (task.kind(), task.target()) {
        (TaskKind::DataImputation, Some(attr)) => format!(
            "You are requested to infer the value of the \"{attr}\" attribute based on the values of other attributes."
        ),
        (TaskKind::ErrorDetection, Some(attr)) => format!(
            "You are requested to decide whether the value of the \"{attr}\" attribute is erroneous based on the values of other attributes."
        ),
        (TaskKind::SchemaMatching, _) => "You are requested to decide whether two attributes refer to the same concept based on their names and descriptions.".to_owned(),
        (TaskKind::EntityMatching, _) => "You are requested to decide whether two records refer to the same real-world entity.".to_owned(),
        _ => unreachable!("task invariant guarantees a target for ED/DI"),
    }
}

fn answer_target(task: &Task) -> String {
    match task.target() {
        Some(attr) if task.kind() == TaskKind::DataImputation => {
            format!("the value of the \"{attr}\" attribute")
        }
        _ => "\"yes\" or \"no\"".to_owned(),
    }
}

/// The closing sentence of each question.
pub fn question_sentence(task: &Task) -> String {
    match (task.kind(), task.target()) {
        (TaskKind::DataImputation, Some(attr)) => format!("What is the {attr}?"),
        (TaskKind::ErrorDetection, Some(attr)) => {
            format!("Is there an error in the \"{attr}\" attribute?")
        }
        (TaskKind::SchemaMatching, _) => {
            "Do these two attributes refer to the same concept?".to_owned()
        }
        (TaskKind::EntityMatching, _) => {
            "Do these two records refer to the same real-world entity?".to_owned()
        }
        _ => unreachable!("task invariant guarantees a target for ED/DI"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub instance: DataInstance,
    pub reason: String,
    pub answer: String,
}

impl FewShotExample {
    pub fn new(
        instance: DataInstance,
        reason: impl Into<String>,
        answer: impl Into<String>,
    ) -> Result<Self> {
        let (reason, answer) = (reason.into(), answer.into());
        for (what, text) in [("reason", &reason), ("answer", &answer)] {
            if text.trim().is_empty() {
                return Err(PromptError::InvalidExample(format!(
                    "{what} of `{}` is empty",
                    instance.id
                )));
            }
            if text.contains(['\n', '\r']) {
                return Err(PromptError::InvalidExample(format!(
                    "{what} of `{}` spans several lines",
                    instance.id
                )));
            }
        }
        Ok(FewShotExample {
            instance,
            reason,
            answer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub task: Task,
    pub reasoning_enabled: bool,
    pub few_shots: Vec<FewShotExample>,
    pub type_hint: Option<String>,
    pub confirm_target: bool,
}

impl PromptConfig {
    pub fn new(task: Task) -> Self {
        PromptConfig {
            task,
            reasoning_enabled: true,
            few_shots: Vec::new(),
            type_hint: None,
            confirm_target: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.type_hint.is_some() && self.task.kind() != TaskKind::DataImputation {
            return Err(PromptError::InvalidConfig(
                "type hints only apply to data imputation".into(),
            ));
        }
        if let Some(bad) = self
            .few_shots
            .iter()
            .find(|ex| !ex.instance.payload.fits(self.task.kind()))
        {
            return Err(PromptError::InvalidConfig(format!(
                "few-shot example `{}` does not fit a {} task",
                bad.instance.id,
                self.task.kind()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub messages: Vec<Message>,
    pub question_count: usize,
    pub instance_ids: Vec<String>,
}

impl PromptBundle {
    /// Plain-text rendering used for prompt files and golden comparisons.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (i, msg) in self.messages.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str("=== ");
            out.push_str(msg.role.as_str());
            out.push_str(" ===\n");
            out.push_str(&msg.content);
            out.push('\n');
        }
        out
    }
}

pub fn build_zero_shot(config: &PromptConfig) -> String {
    let task = &config.task;
    let mut lines = vec![task_specification(task)];
    if config.reasoning_enabled {
        lines.push(format!(
            "{TWO_LINE_RULE} In the first line, you give the reason for the inference. In the second line, you ONLY give {}.",
            answer_target(task)
        ));
    } else {
        lines.push(format!(
            "MUST answer each question in one line. You ONLY give {}.",
            answer_target(task)
        ));
    }
    lines.push(ANSWER_HEADER_RULE.to_owned());
    // without a reason line there is nothing to confirm the attribute in
    if task.kind() == TaskKind::ErrorDetection && config.confirm_target && config.reasoning_enabled
    {
        lines.push(CONFIRM_TARGET.to_owned());
    }
    if let (TaskKind::DataImputation, Some(hint)) = (task.kind(), &config.type_hint) {
        lines.push(hint.clone());
    }
    lines.join("\n")
}

fn masked(record: &Record, task: &Task) -> Record {
    match task.target() {
        Some(target) if task.kind() == TaskKind::DataImputation => record.with_missing(target),
        _ => record.clone(),
    }
}

/// Question text without the `Question k:` prefix. For imputation the target
/// value is always shown as missing.
pub fn question_body(instance: &DataInstance, task: &Task) -> Result<String> {
    if !instance.payload.fits(task.kind()) {
        return Err(ContextError::PayloadTaskMismatch {
            id: instance.id.clone(),
            kind: task.kind(),
        }
        .into());
    }
    let sentence = question_sentence(task);
    Ok(match &instance.payload {
        Payload::Tuple(r) => format!(
            "Record is {}. {sentence}",
            serialize_record(&masked(r, task))?
        ),
        Payload::AttributePair { left, right } => format!(
            "Attribute A is {}. Attribute B is {}. {sentence}",
            serialize_record(left)?,
            serialize_record(right)?
        ),
        Payload::TuplePair { left, right } => format!(
            "Record A is {}. Record B is {}. {sentence}",
            serialize_record(left)?,
            serialize_record(right)?
        ),
    })
}

fn question_lines<'a, I>(instances: I, task: &Task, start_index: usize) -> Result<String>
where
    I: IntoIterator<Item = &'a DataInstance>,
{
    let mut lines = Vec::new();
    for (offset, instance) in instances.into_iter().enumerate() {
        lines.push(format!(
            "Question {}: {}",
            start_index + offset,
            question_body(instance, task)?
        ));
    }
    Ok(lines.join("\n"))
}

pub fn build_few_shot_block(config: &PromptConfig, task: &Task) -> Result<Vec<Message>> {
    if config.few_shots.is_empty() {
        return Err(PromptError::EmptyFewShots);
    }
    let questions = question_lines(config.few_shots.iter().map(|ex| &ex.instance), task, 1)?;
    let answers = config
        .few_shots
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            if config.reasoning_enabled {
                format!("Answer {}:\n{}\n{}", i + 1, ex.reason, ex.answer)
            } else {
                format!("Answer {}:\n{}", i + 1, ex.answer)
            }
        })
        .collect::<Vec<_>>()
        .join("\n");
    Ok(vec![
        Message::new(Role::User, questions),
        Message::new(Role::Assistant, answers),
    ])
}

pub fn build_batch_questions(
    instances: &[DataInstance],
    task: &Task,
    start_index: usize,
) -> Result<String> {
    if instances.is_empty() {
        return Err(PromptError::EmptyBatch);
    }
    question_lines(instances, task, start_index)
}

pub fn assemble(config: &PromptConfig, batch: &[DataInstance]) -> Result<PromptBundle> {
    config.validate()?;
    let mut messages = vec![
        Message::new(Role::System, PERSONA),
        Message::new(Role::User, build_zero_shot(config)),
    ];
    if !config.few_shots.is_empty() {
        messages.extend(build_few_shot_block(config, &config.task)?);
    }
    messages.push(Message::new(
        Role::User,
        build_batch_questions(batch, &config.task, 1)?,
    ));
    Ok(PromptBundle {
        messages,
        question_count: batch.len(),
        instance_ids: batch.iter().map(|i| i.id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn carey() -> DataInstance {
        DataInstance::tuple(
            "restaurant.csv:0",
            Record::from_pairs(
                "r",
                [
                    ("name", Some("carey's corner")),
                    ("addr", Some("1215 powers ferry rd.")),
                    ("phone", Some("770-933-0909")),
                    ("type", Some("hamburgers")),
                    ("city", None),
                ],
            )
            .unwrap(),
        )
    }

    fn em_pair(id: &str) -> DataInstance {
        DataInstance::tuple_pair(
            id,
            Record::from_pairs("l", [("title", Some("ipod"))]).unwrap(),
            Record::from_pairs("r", [("title", Some("apple ipod"))]).unwrap(),
        )
    }

    #[test]
    fn zero_shot_for_imputation() {
        let mut cfg = PromptConfig::new(Task::data_imputation("city"));
        let text = build_zero_shot(&cfg);
        assert!(text.contains(
            r#"infer the value of the "city" attribute based on the values of other attributes"#
        ));
        assert!(text.contains(TWO_LINE_RULE));
        assert!(text
            .contains(r#"In the second line, you ONLY give the value of the "city" attribute."#));

        cfg.type_hint = Some(r#"The "hoursperweek" attribute can be a range of integers."#.into());
        assert!(build_zero_shot(&cfg)
            .contains(r#"The "hoursperweek" attribute can be a range of integers"#));
    }

    #[test]
    fn zero_shot_for_error_detection() {
        let mut cfg = PromptConfig::new(Task::error_detection("age"));
        assert!(build_zero_shot(&cfg)
            .contains("Please confirm the target attribute in your reason for inference"));
        cfg.confirm_target = false;
        assert!(!build_zero_shot(&cfg).contains("confirm the target"));
    }

    #[test]
    fn every_task_gets_two_line_rule_when_reasoning() {
        for task in [
            Task::error_detection("a"),
            Task::data_imputation("a"),
            Task::schema_matching(),
            Task::entity_matching(),
        ] {
            let mut cfg = PromptConfig::new(task);
            assert!(build_zero_shot(&cfg).contains(TWO_LINE_RULE));
            cfg.reasoning_enabled = false;
            assert!(!build_zero_shot(&cfg).contains(TWO_LINE_RULE));
        }
    }

    #[test]
    fn few_shot_block_structure() {
        let mut cfg = PromptConfig::new(Task::data_imputation("city"));
        assert_eq!(
            build_few_shot_block(&cfg, &cfg.task.clone()),
            Err(PromptError::EmptyFewShots)
        );
        let reason = "The phone number \"770\" suggests that the city should be either Atlanta or Marietta in Georgia. The addr attribute suggests a place in Marietta.";
        cfg.few_shots = vec![FewShotExample::new(carey(), reason, "Marietta").unwrap()];
        let block = build_few_shot_block(&cfg, &cfg.task.clone()).unwrap();
        assert_eq!(block[0].role, Role::User);
        assert_eq!(
            block[0].content,
            r#"Question 1: Record is [name: "carey's corner", addr: "1215 powers ferry rd.", phone: "770-933-0909", type: "hamburgers", city: ???]. What is the city?"#
        );
        assert_eq!(block[1].role, Role::Assistant);
        assert_eq!(block[1].content, format!("Answer 1:\n{reason}\nMarietta"));

        cfg.reasoning_enabled = false;
        let block = build_few_shot_block(&cfg, &cfg.task.clone()).unwrap();
        assert_eq!(block[1].content, "Answer 1:\nMarietta");
    }

    #[test]
    fn few_shot_answer_headers_counted() {
        let mut cfg = PromptConfig::new(Task::entity_matching());
        cfg.few_shots = (0..3)
            .map(|i| FewShotExample::new(em_pair(&format!("p{i}")), "same product", "yes").unwrap())
            .collect();
        let block = build_few_shot_block(&cfg, &cfg.task.clone()).unwrap();
        assert_eq!(block[1].content.matches("Answer ").count(), 3);
        assert!(block[1].content.contains("Answer 3:"));
    }

    #[test]
    fn few_shot_example_validation() {
        assert!(FewShotExample::new(carey(), "", "x").is_err());
        assert!(FewShotExample::new(carey(), "a\nb", "x").is_err());
        assert!(FewShotExample::new(carey(), "a", " ").is_err());
    }

    #[test]
    fn batch_question_numbering() {
        let task = Task::entity_matching();
        let batch: Vec<_> = (0..3).map(|i| em_pair(&format!("p{i}"))).collect();
        let text = build_batch_questions(&batch, &task, 1).unwrap();
        let headers: Vec<_> = text.lines().map(|l| l.split(':').next().unwrap()).collect();
        assert_eq!(headers, ["Question 1", "Question 2", "Question 3"]);
        assert_eq!(
            text.lines().next().unwrap(),
            r#"Question 1: Record A is [title: "ipod"]. Record B is [title: "apple ipod"]. Do these two records refer to the same real-world entity?"#
        );
        assert_eq!(
            build_batch_questions(&[], &task, 1),
            Err(PromptError::EmptyBatch)
        );
        assert!(matches!(
            build_batch_questions(&[carey()], &task, 1),
            Err(PromptError::Context(
                ContextError::PayloadTaskMismatch { .. }
            ))
        ));
    }

    #[test]
    fn single_question_matches_few_shot_format() {
        let task = Task::data_imputation("city");
        let mut cfg = PromptConfig::new(task.clone());
        cfg.few_shots = vec![FewShotExample::new(carey(), "r", "Marietta").unwrap()];
        let few = build_few_shot_block(&cfg, &task).unwrap();
        assert_eq!(
            build_batch_questions(&[carey()], &task, 1).unwrap(),
            few[0].content
        );
    }

    #[test]
    fn imputation_target_is_masked() {
        let task = Task::data_imputation("city");
        let inst = DataInstance::tuple(
            "x",
            Record::from_pairs("x", [("phone", Some("770")), ("city", Some("marietta"))]).unwrap(),
        );
        let body = question_body(&inst, &task).unwrap();
        assert!(body.contains("city: ???"));
        assert!(!body.contains("marietta"));
    }

    #[test]
    fn assemble_message_counts() {
        let task = Task::entity_matching();
        let mut cfg = PromptConfig::new(task);
        let bundle = assemble(&cfg, &[em_pair("a")]).unwrap();
        assert_eq!(bundle.messages.len(), 3);
        assert_eq!(bundle.messages[0], Message::new(Role::System, PERSONA));
        assert_eq!(bundle.question_count, 1);

        cfg.few_shots = vec![FewShotExample::new(em_pair("f"), "same", "yes").unwrap()];
        let bundle = assemble(&cfg, &[em_pair("a"), em_pair("b")]).unwrap();
        let roles: Vec<_> = bundle.messages.iter().map(|m| m.role).collect();
        assert_eq!(
            roles,
            [
                Role::System,
                Role::User,
                Role::User,
                Role::Assistant,
                Role::User
            ]
        );
        assert_eq!(bundle.instance_ids, ["a", "b"]);
        assert_eq!(
            bundle
                .messages
                .iter()
                .filter(|m| m.content == PERSONA)
                .count(),
            1
        );
    }

    #[test]
    fn type_hint_rejected_outside_imputation() {
        let mut cfg = PromptConfig::new(Task::entity_matching());
        cfg.type_hint = Some("hint".into());
        assert!(matches!(
            assemble(&cfg, &[em_pair("a")]),
            Err(PromptError::InvalidConfig(_))
        ));
    }
}
