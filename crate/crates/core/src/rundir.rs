//! On-disk layout of a run directory.
//!
//! ```text
//! <dir>/config.toml          resolved configuration
//! <dir>/plan.json            batch plan
//! <dir>/prompts/batch-NNNN.txt   rendered prompt of batch NNNN (1-based)
//! <dir>/prompts/batch-NNNN.json  the same prompt as messages
//! <dir>/transcript.jsonl     request/response records
//! <dir>/predictions.jsonl    one scored answer per instance
//! <dir>/report.json          evaluation report
//! <dir>/manifest.json        progress, for resuming
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::batching::BatchPlan;
use crate::eval::EvalReport;
use crate::pipeline::PredictionRecord;
use crate::prompt::PromptBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Failed,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub fingerprint: String,
    pub total_batches: usize,
    /// 0-based indices of batches with a recorded response.
    pub completed: BTreeSet<usize>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Manifest {
    pub fn new(fingerprint: impl Into<String>, total_batches: usize) -> Self {
        Manifest {
            fingerprint: fingerprint.into(),
            total_batches,
            completed: BTreeSet::new(),
            status: RunStatus::Running,
            error: None,
        }
    }
}

pub struct RunDir {
    root: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes via a temporary sibling so readers never see a torn file.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

pub fn prompt_file_stem(index: usize) -> String {
    format!("batch-{:04}", index + 1)
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("prompts"))?;
        Ok(RunDir { root })
    }

    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("{} is not a directory", root.display()),
            ));
        }
        Ok(RunDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn plan_path(&self) -> PathBuf {
        self.root.join("plan.json")
    }

    pub fn prompts_dir(&self) -> PathBuf {
        self.root.join("prompts")
    }

    pub fn transcript_path(&self) -> PathBuf {
        self.root.join("transcript.jsonl")
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.root.join("predictions.jsonl")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn write_config(&self, toml: &str) -> io::Result<()> {
        write_atomic(&self.config_path(), toml.as_bytes())
    }

    pub fn write_plan(&self, plan: &BatchPlan) -> io::Result<()> {
        write_json(&self.plan_path(), plan)
    }

    /// Writes `batch-NNNN.txt` and `.json` for every bundle and returns the
    /// text file paths.
    pub fn write_prompts(&self, bundles: &[PromptBundle]) -> io::Result<Vec<PathBuf>> {
        let dir = self.prompts_dir();
        fs::create_dir_all(&dir)?;
        bundles
            .iter()
            .enumerate()
            .map(|(i, bundle)| {
                let stem = prompt_file_stem(i);
                let text = dir.join(format!("{stem}.txt"));
                fs::write(&text, bundle.render_text())?;
                write_json(&dir.join(format!("{stem}.json")), bundle)?;
                Ok(text)
            })
            .collect()
    }

    pub fn write_predictions(&self, records: &[PredictionRecord]) -> io::Result<()> {
        let mut text = String::new();
        for r in records {
            text.push_str(&serde_json::to_string(r).map_err(io::Error::other)?);
            text.push('\n');
        }
        write_atomic(&self.predictions_path(), text.as_bytes())
    }

    pub fn write_report(&self, report: &EvalReport) -> io::Result<()> {
        write_json(&self.report_path(), report)
    }

    pub fn read_report(&self) -> io::Result<EvalReport> {
        let text = fs::read_to_string(self.report_path())?;
        serde_json::from_str(&text).map_err(io::Error::other)
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> io::Result<()> {
        write_json(&self.manifest_path(), manifest)
    }

    pub fn read_manifest(&self) -> io::Result<Option<Manifest>> {
        match fs::read_to_string(self.manifest_path()) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(io::Error::other),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}
