//! Command-line interface.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::batching::{BatchMode, BatchingError};
use crate::config::{ConfigError, RunConfig, TEMPLATE};
use crate::eval::{
    ablation_csv, ablation_table, estimate_table, run_ablation, standard_grid, AmortizationModel,
    ComponentSet,
};
use crate::gateway::{BackendKind, ByteEstimator, Gateway, ReplayBackend, TranscriptWriter};
use crate::pipeline::{finish, prepare, send_batches, Experiment, PipelineError};
use crate::rundir::{Manifest, RunDir, RunStatus};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Backend(String),
    #[error("{failures:.1}% of answers failed to parse (limit {limit:.1}%)")]
    ParseThreshold { failures: f64, limit: f64 },
    #[error("{0} prompt files differ from the golden set")]
    GoldenMismatch(usize),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
            CliError::ParseThreshold { .. } => 4,
            CliError::GoldenMismatch(_) | CliError::Other(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Gateway { .. } => CliError::Backend(e.to_string()),
            PipelineError::Batching(BatchingError::EmbedderUnavailable(_)) => {
                CliError::Backend(e.to_string())
            }
            PipelineError::Data(_)
            | PipelineError::Prompt(_)
            | PipelineError::MissingGold(_)
            | PipelineError::Setup(_)
            | PipelineError::Eval(_) => CliError::Config(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tabprep",
    version,
    about = "Preprocess tabular data with chat language models"
)]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a commented configuration template.
    Init {
        #[arg(default_value = "tabprep.toml")]
        path: PathBuf,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Assemble and write every prompt without contacting a backend.
    DryRun {
        #[command(flatten)]
        run: RunArgs,
        /// Compare the written prompts byte for byte with this directory.
        #[arg(long)]
        golden: Option<PathBuf>,
    },
    /// Run the full pipeline and write a run directory.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Continue an interrupted run in the same output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Predict prompt tokens and cost for several batch sizes.
    Estimate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,15")]
        sizes: Vec<usize>,
    },
    /// Re-score a finished run from its own transcript.
    Evaluate { run_dir: PathBuf },
    /// Run one configuration per component set and tabulate the results.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated component sets such as `ZS-T,ZS-T+FS`; defaults to
        /// the six standard rows.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<ComponentSet>,
        /// Where to write the CSV grid (default: `<out>/ablation.csv`).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Http,
    Mock,
    Replay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Random,
    Cluster,
}

/// Config file plus overrides.
#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub backend: Option<BackendArg>,
    /// Transcript for the replay backend.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub few_shots: Option<PathBuf>,
    #[arg(long)]
    pub no_reasoning: bool,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Answer given by the mock backend to unlisted questions.
    #[arg(long)]
    pub mock_default: Option<String>,
}

impl RunArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(b) = self.backend {
            cfg.backend.kind = match b {
                BackendArg::Http => BackendKind::Http,
                BackendArg::Mock => BackendKind::Mock,
                BackendArg::Replay => BackendKind::Replay,
            };
        }
        if let Some(t) = &self.transcript {
            cfg.backend.transcript = Some(t.clone());
        }
        if let Some(m) = &self.model {
            cfg.model.name = m.clone();
        }
        if let Some(t) = self.temperature {
            cfg.model.temperature = t;
        }
        if let Some(b) = self.batch_size {
            cfg.batching.batch_size = b;
        }
        if let Some(m) = self.mode {
            cfg.batching.mode = match m {
                ModeArg::Random => BatchMode::Random,
                ModeArg::Cluster => BatchMode::Cluster,
            };
        }
        if let Some(s) = self.seed {
            cfg.batching.seed = s;
        }
        if let Some(f) = &self.few_shots {
            cfg.data.few_shots = Some(f.clone());
        }
        if self.no_reasoning {
            cfg.prompt.reasoning = false;
        }
        if let Some(w) = self.workers {
            cfg.backend.workers = Some(w);
        }
        if let Some(a) = &self.mock_default {
            cfg.backend.mock.default_answer = Some(a.clone());
        }
    }

    /// Loads, overrides and validates the configuration; prints warnings.
    pub fn load(&self) -> Result<(RunConfig, Vec<String>), CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        self.apply(&mut cfg);
        let warnings = cfg.validate()?;
        for w in &warnings {
            eprintln!("warning: {w}");
        }
        Ok((cfg, warnings))
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Init { path, force } => cmd_init(&path, force),
        Command::DryRun { run, golden } => cmd_dry_run(&run, golden.as_deref()),
        Command::Run { run, resume } => cmd_run(&run, resume),
        Command::Estimate { run, sizes } => cmd_estimate(&run, &sizes),
        Command::Evaluate { run_dir } => cmd_evaluate(&run_dir),
        Command::Ablate { run, grid, csv } => cmd_ablate(&run, grid, csv),
    }
}

fn cmd_init(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Config(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    fs::write(path, TEMPLATE)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_dry_run(args: &RunArgs, golden: Option<&Path>) -> Result<(), CliError> {
    let (cfg, _) = args.load()?;
    let exp = cfg.load_experiment()?;
    let embedder = cfg.batching.embedder.build();
    let prepared = prepare(&exp, Some(embedder.as_ref()))?;
    let dir = RunDir::create(&cfg.output.dir)?;
    dir.write_config(&cfg.to_toml())?;
    dir.write_plan(&prepared.plan)?;
    let files = dir.write_prompts(&prepared.bundles)?;

    let sizes: Vec<usize> = prepared.plan.batches.iter().map(Vec::len).collect();
    println!(
        "{} instances in {} batches ({:?}, batch size {}, seed {}); sizes {}..{}",
        exp.instances.len(),
        prepared.plan.len(),
        prepared.plan.mode,
        prepared.plan.batch_size,
        prepared.plan.seed,
        sizes.iter().min().unwrap_or(&0),
        sizes.iter().max().unwrap_or(&0),
    );
    if let Some(clusters) = &prepared.plan.clusters {
        let distinct: BTreeSet<_> = clusters.iter().collect();
        println!("{} clusters", distinct.len());
    }
    println!(
        "{} prompt files in {}",
        files.len(),
        dir.prompts_dir().display()
    );
    println!("fingerprint {}", prepared.fingerprint);

    if let Some(golden) = golden {
        let diffs = compare_prompt_dirs(&dir.prompts_dir(), golden)?;
        for d in &diffs {
            eprintln!("{d}");
        }
        if !diffs.is_empty() {
            return Err(CliError::GoldenMismatch(diffs.len()));
        }
        println!("prompts match {}", golden.display());
    }
    Ok(())
}

fn text_files(dir: &Path) -> std::io::Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.ends_with(".txt") {
            names.insert(name);
        }
    }
    Ok(names)
}

/// One message per `.txt` file that is missing, extra, or different.
pub fn compare_prompt_dirs(actual: &Path, golden: &Path) -> std::io::Result<Vec<String>> {
    let have = text_files(actual)?;
    let want = text_files(golden)?;
    let mut diffs = Vec::new();
    for name in want.difference(&have) {
        diffs.push(format!("missing: {name}"));
    }
    for name in have.difference(&want) {
        diffs.push(format!("unexpected: {name}"));
    }
    for name in have.intersection(&want) {
        let a = fs::read(actual.join(name))?;
        let b = fs::read(golden.join(name))?;
        if a != b {
            let line = a
                .split(|c| *c == b'\n')
                .zip(b.split(|c| *c == b'\n'))
                .position(|(x, y)| x != y)
                .map_or_else(
                    || {
                        a.iter()
                            .filter(|c| **c == b'\n')
                            .count()
                            .min(b.iter().filter(|c| **c == b'\n').count())
                            + 1
                    },
                    |p| p + 1,
                );
            diffs.push(format!("differs: {name} (first difference on line {line})"));
        }
    }
    Ok(diffs)
}

fn build_gateway(
    cfg: &RunConfig,
    exp: &Experiment,
    transcript: Option<&Path>,
) -> Result<Gateway, CliError> {
    let backend = cfg.build_backend(&exp.instances)?;
    let mut gateway = Gateway::new(backend)
        .with_prices(cfg.model.prices)
        .with_retry(cfg.backend.retry)
        .with_rate_limits(cfg.backend.rate_limits);
    if let Some(path) = transcript {
        let replaying_same_file = cfg.backend.kind == BackendKind::Replay
            && cfg.backend.transcript.as_deref() == Some(path);
        if !replaying_same_file {
            let writer =
                TranscriptWriter::open(path).map_err(|e| CliError::Other(e.to_string()))?;
            gateway = gateway.with_transcript(writer);
        }
    }
    Ok(gateway)
}

fn cmd_run(args: &RunArgs, resume: bool) -> Result<(), CliError> {
    let (cfg, warnings) = args.load()?;
    let exp = cfg.load_experiment()?;
    let embedder = cfg.batching.embedder.build();
    let clock = Instant::now();
    let prepared = prepare(&exp, Some(embedder.as_ref()))?;
    let dir = RunDir::create(&cfg.output.dir)?;

    let cache = match (dir.read_manifest()?, resume) {
        (Some(_), false) => {
            return Err(CliError::Config(format!(
                "{} already holds a run; pass --resume or choose another --out",
                dir.root().display()
            )))
        }
        (Some(old), true) => {
            if old.fingerprint != prepared.fingerprint {
                return Err(CliError::Config(
                    "the configuration changed since the interrupted run".into(),
                ));
            }
            if dir.transcript_path().is_file() {
                Some(
                    ReplayBackend::open(&dir.transcript_path())
                        .map_err(|e| CliError::Other(e.to_string()))?,
                )
            } else {
                None
            }
        }
        (None, true) => {
            eprintln!("warning: nothing to resume in {}", dir.root().display());
            None
        }
        (None, false) => None,
    };

    dir.write_config(&cfg.to_toml())?;
    dir.write_plan(&prepared.plan)?;
    dir.write_prompts(&prepared.bundles)?;

    let mut manifest = Manifest::new(prepared.fingerprint.clone(), prepared.bundles.len());
    if let Some(cache) = &cache {
        for (i, bundle) in prepared.bundles.iter().enumerate() {
            if cache.contains(&exp.request(bundle)) {
                manifest.completed.insert(i);
            }
        }
        println!(
            "resuming: {} of {} batches already answered",
            manifest.completed.len(),
            manifest.total_batches
        );
    }
    dir.write_manifest(&manifest)?;

    let mut gateway = build_gateway(&cfg, &exp, Some(&dir.transcript_path()))?;
    if let Some(cache) = cache {
        gateway = gateway.with_cache(cache);
    }
    let manifest = Mutex::new(manifest);
    let sent = send_batches(&exp, &prepared.bundles, &gateway, &|result| {
        let mut m = manifest.lock().unwrap();
        m.completed.insert(result.index);
        if let Err(e) = dir.write_manifest(&m) {
            log::warn!("cannot update manifest: {e}");
        }
    });
    let mut manifest = manifest.into_inner().unwrap();
    let results = match sent {
        Ok(r) => r,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            dir.write_manifest(&manifest)?;
            eprintln!(
                "{} of {} batches completed; rerun with --resume to continue",
                manifest.completed.len(),
                manifest.total_batches
            );
            return Err(e.into());
        }
    };

    let mut outcome = finish(&exp, prepared, results, &gateway, clock.elapsed())?;
    outcome.report.warnings = warnings;
    dir.write_predictions(&outcome.predictions)?;
    dir.write_report(&outcome.report)?;
    manifest.status = RunStatus::Complete;
    dir.write_manifest(&manifest)?;

    print!("{}", outcome.report.render_table());
    println!("run directory {}", dir.root().display());
    check_parse_failures(
        outcome.report.parse_failure_rate(),
        cfg.output.max_parse_failure_rate,
    )
}

fn check_parse_failures(rate: f64, limit: f64) -> Result<(), CliError> {
    if rate > limit {
        Err(CliError::ParseThreshold {
            failures: rate * 100.0,
            limit: limit * 100.0,
        })
    } else {
        Ok(())
    }
}

fn cmd_estimate(args: &RunArgs, sizes: &[usize]) -> Result<(), CliError> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(CliError::Config("batch sizes must be positive".into()));
    }
    let (cfg, _) = args.load()?;
    let exp = cfg.load_experiment()?;
    let model = AmortizationModel::measure(&exp.prompt, &exp.instances, &ByteEstimator)
        .map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "{} instances; instruction {} tokens; mean question {:.1} tokens",
        model.instances(),
        model.instruction_tokens,
        model.mean_question_tokens()
    );
    print!(
        "{}",
        render_estimate(&estimate_table(&model, sizes, cfg.model.prices))
    );
    Ok(())
}

pub fn render_estimate(rows: &[crate::eval::EstimateRow]) -> String {
    let mut out = format!(
        "{:>10}  {:>8}  {:>13}  {:>12}  {:>12}\n",
        "batch size", "batches", "prompt tokens", "per instance", "prompt cost"
    );
    for r in rows {
        out.push_str(&format!(
            "{:>10}  {:>8}  {:>13}  {:>12.1}  {:>12}\n",
            r.batch_size,
            r.batches,
            r.prompt_tokens,
            r.tokens_per_instance,
            r.cost.to_string()
        ));
    }
    out
}

fn cmd_evaluate(run_dir: &Path) -> Result<(), CliError> {
    let dir = RunDir::open(run_dir)?;
    let mut cfg = RunConfig::load(&dir.config_path())?;
    cfg.backend.kind = BackendKind::Replay;
    cfg.backend.transcript = Some(dir.transcript_path());
    cfg.validate()?;
    let exp = cfg.load_experiment()?;
    let embedder = cfg.batching.embedder.build();
    let clock = Instant::now();
    let prepared = prepare(&exp, Some(embedder.as_ref()))?;
    let gateway = build_gateway(&cfg, &exp, None)?;
    let results = send_batches(&exp, &prepared.bundles, &gateway, &|_| {})?;
    let mut outcome = finish(&exp, prepared, results, &gateway, clock.elapsed())?;

    print!("{}", outcome.report.render_table());
    match dir.read_report() {
        Ok(stored) => {
            outcome.report.backend = stored.backend;
            outcome.report.warnings = stored.warnings.clone();
            if outcome.report.deterministic_json() == stored.deterministic_json() {
                println!("matches {}", dir.report_path().display());
            } else {
                return Err(CliError::Other(format!(
                    "re-scored report differs from {}",
                    dir.report_path().display()
                )));
            }
        }
        Err(e) => eprintln!("warning: no stored report to compare ({e})"),
    }
    Ok(())
}

fn cmd_ablate(
    args: &RunArgs,
    grid: Vec<ComponentSet>,
    csv: Option<PathBuf>,
) -> Result<(), CliError> {
    let (cfg, _) = args.load()?;
    let base = cfg.load_experiment()?;
    let grid = if grid.is_empty() {
        standard_grid()
    } else {
        grid
    };
    let dir = RunDir::create(&cfg.output.dir)?;
    dir.write_config(&cfg.to_toml())?;
    let transcript = dir.transcript_path();
    let embedder = cfg.batching.embedder.build();

    let gateway_for = |_: &ComponentSet| -> Result<Gateway, PipelineError> {
        build_gateway(&cfg, &base, Some(&transcript))
            .map_err(|e| PipelineError::Setup(e.to_string()))
    };
    let cells = run_ablation(&base, &grid, &gateway_for, Some(embedder.as_ref()))?;

    let json = serde_json::to_string_pretty(&cells).map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(dir.root().join("ablation.json"), json + "\n")?;
    let csv_path = csv.unwrap_or_else(|| dir.root().join("ablation.csv"));
    fs::write(
        &csv_path,
        ablation_csv(&cells).map_err(|e| CliError::Other(e.to_string()))?,
    )?;
    print!("{}", ablation_table(&cells));
    println!("grid written to {}", csv_path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config(String::new()).exit_code(), 2);
        assert_eq!(CliError::Backend(String::new()).exit_code(), 3);
        assert_eq!(check_parse_failures(0.2, 0.1).unwrap_err().exit_code(), 4);
        assert!(check_parse_failures(0.1, 0.1).is_ok());
    }

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from([
            "tabprep",
            "estimate",
            "-c",
            "x.toml",
            "--sizes",
            "1,2,4,8,15",
        ])
        .unwrap();
        let Command::Estimate { sizes, .. } = cli.command else {
            panic!()
        };
        assert_eq!(sizes, vec![1, 2, 4, 8, 15]);

        let cli = Cli::try_parse_from([
            "tabprep",
            "ablate",
            "-c",
            "x.toml",
            "--grid",
            "ZS-T,ZS-T+FS",
        ])
        .unwrap();
        let Command::Ablate { grid, .. } = cli.command else {
            panic!()
        };
        assert_eq!(grid.len(), 2);
        assert!(Cli::try_parse_from(["tabprep", "ablate", "-c", "x", "--grid", "FS"]).is_err());
    }

    #[test]
    fn golden_comparison_reports_each_difference() {
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        fs::create_dir_all(&a).unwrap();
        fs::create_dir_all(&b).unwrap();
        fs::write(a.join("batch-0001.txt"), "x\ny\n").unwrap();
        fs::write(b.join("batch-0001.txt"), "x\ny\n").unwrap();
        assert!(compare_prompt_dirs(&a, &b).unwrap().is_empty());
        fs::write(b.join("batch-0001.txt"), "x\nz\n").unwrap();
        fs::write(b.join("batch-0002.txt"), "").unwrap();
        let diffs = compare_prompt_dirs(&a, &b).unwrap();
        assert_eq!(diffs.len(), 2);
        assert!(diffs.iter().any(|d| d.contains("line 2")));
        assert!(diffs.iter().any(|d| d.starts_with("missing")));
    }
}
