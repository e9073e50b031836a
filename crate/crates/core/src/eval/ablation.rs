//! Component ablations: runs the same data under subsets of the prompting
//! techniques and collects one report per subset.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport};
use crate::batching::{BatchMode, Embedder};
use crate::gateway::Gateway;
use crate::pipeline::{run, Experiment, PipelineError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    /// Zero-shot task specification; the base of every configuration.
    #[serde(rename = "ZS-T")]
    ZsT,
    /// Few-shot examples.
    #[serde(rename = "FS")]
    Fs,
    /// Batch prompting.
    #[serde(rename = "B")]
    B,
    /// Zero-shot reasoning.
    #[serde(rename = "ZS-R")]
    ZsR,
}

impl Component {
    pub fn label(self) -> &'static str {
        match self {
            Component::ZsT => "ZS-T",
            Component::Fs => "FS",
            Component::B => "B",
            Component::ZsR => "ZS-R",
        }
    }
}

impl FromStr for Component {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ZS-T" => Ok(Component::ZsT),
            "FS" => Ok(Component::Fs),
            "B" => Ok(Component::B),
            "ZS-R" => Ok(Component::ZsR),
            _ => Err(EvalError::UnknownComponent(s.trim().to_owned())),
        }
    }
}

/// A set of components that always contains [`Component::ZsT`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ComponentSet(BTreeSet<Component>);

impl ComponentSet {
    pub fn new(components: impl IntoIterator<Item = Component>) -> Result<Self, EvalError> {
        let set: BTreeSet<Component> = components.into_iter().collect();
        if !set.contains(&Component::ZsT) {
            let text = set.iter().map(|c| c.label()).collect::<Vec<_>>().join("+");
            return Err(EvalError::MissingBase(text));
        }
        Ok(ComponentSet(set))
    }

    pub fn contains(&self, component: Component) -> bool {
        self.0.contains(&component)
    }

    pub fn components(&self) -> impl Iterator<Item = Component> + '_ {
        self.0.iter().copied()
    }
}

impl fmt::Display for ComponentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<_> = self.0.iter().map(|c| c.label()).collect();
        f.write_str(&labels.join("+"))
    }
}

impl FromStr for ComponentSet {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts = s
            .split('+')
            .map(str::parse)
            .collect::<Result<Vec<Component>, _>>()?;
        ComponentSet::new(parts)
    }
}

impl TryFrom<String> for ComponentSet {
    type Error = EvalError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ComponentSet> for String {
    fn from(set: ComponentSet) -> Self {
        set.to_string()
    }
}

/// The six standard rows, from plain zero-shot up to every component.
pub fn standard_grid() -> Vec<ComponentSet> {
    [
        "ZS-T",
        "ZS-T+B",
        "ZS-T+B+ZS-R",
        "ZS-T+FS",
        "ZS-T+FS+B",
        "ZS-T+FS+B+ZS-R",
    ]
    .iter()
    .map(|s| s.parse().expect("standard rows are valid"))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub components: ComponentSet,
    pub report: EvalReport,
}

/// Derives the experiment for one component set from the full configuration
/// in `base`: without FS the examples are dropped, without B every batch holds
/// one question, and reasoning is on exactly when ZS-R is present. Seeds are
/// left untouched.
pub fn apply_components(base: &Experiment, set: &ComponentSet) -> Result<Experiment, EvalError> {
    let mut exp = base.clone();
    if set.contains(Component::Fs) {
        if base.prompt.few_shots.is_empty() {
            return Err(EvalError::FewShotsRequired(set.to_string()));
        }
    } else {
        exp.prompt.few_shots.clear();
    }
    if !set.contains(Component::B) {
        exp.batching.batch_size = 1;
        exp.batching.mode = BatchMode::Random;
        exp.batching.clusters = None;
    }
    exp.prompt.reasoning_enabled = set.contains(Component::ZsR);
    Ok(exp)
}

/// Runs every cell in order. `gateway_for` builds a fresh gateway (and so a
/// fresh meter) per cell.
pub fn run_ablation(
    base: &Experiment,
    grid: &[ComponentSet],
    gateway_for: &dyn Fn(&ComponentSet) -> Result<Gateway, PipelineError>,
    embedder: Option<&dyn Embedder>,
) -> Result<Vec<AblationCell>, PipelineError> {
    // validate the whole grid before spending anything
    let experiments = grid
        .iter()
        .map(|set| apply_components(base, set))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cells = Vec::with_capacity(grid.len());
    for (set, exp) in grid.iter().zip(&experiments) {
        log::info!("ablation cell {set}");
        let gateway = gateway_for(set)?;
        let outcome = run(exp, &gateway, embedder)?;
        cells.push(AblationCell {
            components: set.clone(),
            report: outcome.report,
        });
    }
    Ok(cells)
}
