//! Pretraining, continual training and probing of one experiment, plus the
//! on-disk run layout:
//!
//! ```text
//! <out>/config.toml                resolved configuration
//! <out>/run.log                    timestamped progress (not deterministic)
//! <out>/<method>/metrics.jsonl     one step report per line
//! <out>/<method>/accuracy_matrix.csv
//! <out>/<method>/summary.json
//! <out>/<method>/checkpoints/after_domain_<t>.llck
//! <out>/lleda/replay_buffer.llrb
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lleda_core::data::{generate_domain, load_idx, parse_idx, DomainSource, DomainStream};
use lleda_core::{
    evaluate_sequence, DualNet, Error as CoreError, Method, ReplayBuffer, Rng, SequenceMetrics,
    StepReport, Trainer,
};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig, MethodChoice};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("training diverged at step {} of domain {}", .0.step, .0.domain_index)]
    Divergence(StepReport),
    #[error(transparent)]
    Core(CoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl From<CoreError> for RunError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Divergence(r) => RunError::Divergence(*r),
            other => RunError::Core(other),
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Divergence(_) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Training streams (unlabelled) and labelled evaluation sets, in order.
pub struct Domains {
    pub train: Vec<DomainSource>,
    pub eval: Vec<DomainSource>,
}

pub fn build_domains(cfg: &ExperimentConfig) -> Result<Domains, RunError> {
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (i, dom) in cfg.domains.iter().enumerate() {
        match &dom.idx {
            Some(idx) => {
                train.push(load_idx(&idx.train_images, None)?);
                let images = fs::read(&idx.eval_images).map_err(io_err(&idx.eval_images))?;
                let labels = fs::read(&idx.eval_labels).map_err(io_err(&idx.eval_labels))?;
                eval.push(parse_idx(&images, Some(&labels))?);
            }
            None => {
                train.push(generate_domain(&cfg.domain_spec(i, false))?.unlabeled());
                eval.push(generate_domain(&cfg.domain_spec(i, true))?);
            }
        }
    }
    Ok(Domains { train, eval })
}

/// The two trainable methods, named as in output paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Lleda,
    Baseline,
}

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Lleda => "lleda",
            MethodName::Baseline => "baseline",
        }
    }

    pub fn selected(choice: MethodChoice) -> Vec<MethodName> {
        let mut v = Vec::new();
        if choice.runs_lleda() {
            v.push(MethodName::Lleda);
        }
        if choice.runs_baseline() {
            v.push(MethodName::Baseline);
        }
        v
    }

    fn method(self) -> Method {
        match self {
            MethodName::Lleda => Method::Lleda,
            MethodName::Baseline => Method::FINETUNE,
        }
    }
}

pub struct MethodOutcome {
    pub method: MethodName,
    pub metrics: SequenceMetrics,
    pub reports: Vec<StepReport>,
    pub checkpoints: Vec<DualNet<f32>>,
    pub buffer: Option<ReplayBuffer<f32>>,
}

/// Summary written next to each method's metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: MethodName,
    pub seed: u64,
    pub domains: Vec<String>,
    pub steps: usize,
    pub average: f64,
    pub forgetting_per_domain: Vec<f64>,
    pub accuracy_matrix: Vec<Vec<f64>>,
}

/// Trains and evaluates one method in memory. Both methods start from the
/// same initial network for a given seed.
pub fn run_method(
    cfg: &ExperimentConfig,
    which: MethodName,
    domains: &Domains,
    on_step: &mut dyn FnMut(&StepReport) -> Result<(), CoreError>,
) -> Result<MethodOutcome, RunError> {
    let mut net = DualNet::<f32>::new(cfg.net.clone(), &mut Rng::new(cfg.seed))?;
    let mut trainer = Trainer::<f32>::new(cfg.train_config(), which.method())?;
    let mut buffer = trainer.new_buffer()?;
    let mut stream = DomainStream::new(domains.train.clone())?;
    let run = trainer.train_sequence(&mut net, &mut buffer, &mut stream, on_step)?;
    let metrics = evaluate_sequence(&run.checkpoints, &domains.eval, &cfg.probe_options())?;
    Ok(MethodOutcome {
        method: which,
        metrics,
        reports: run.reports,
        checkpoints: run.checkpoints,
        buffer: (which == MethodName::Lleda).then_some(buffer),
    })
}

/// Appends timestamped lines to `run.log`.
pub struct RunLog {
    file: File,
    path: PathBuf,
}

impl RunLog {
    pub fn open(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join("run.log");
        let file = File::options()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(Self { file, path })
    }

    pub fn line(&mut self, msg: &str) -> Result<(), RunError> {
        let t = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default();
        writeln!(
            self.file,
            "[{}.{:03}] {msg}",
            t.as_secs(),
            t.subsec_millis()
        )
        .map_err(io_err(&self.path))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Runs every selected method and writes the run directory.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<MethodOutcome>, RunError> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join("config.toml"), cfg.to_toml().as_bytes())?;
    let mut log = RunLog::open(out)?;
    log.line(&format!("seed {} domains {}", cfg.seed, cfg.domains.len()))?;
    let domains = build_domains(cfg)?;

    let mut outcomes = Vec::new();
    for which in MethodName::selected(cfg.method) {
        let dir = out.join(which.as_str());
        let ckpt_dir = dir.join("checkpoints");
        fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
        log.line(&format!("{} started", which.as_str()))?;

        let metrics_path = dir.join("metrics.jsonl");
        let mut jsonl = BufWriter::new(File::create(&metrics_path).map_err(io_err(&metrics_path))?);
        let mut last: Option<StepReport> = None;
        let mut on_step = |r: &StepReport| -> Result<(), CoreError> {
            serde_json::to_writer(&mut jsonl, r).map_err(std::io::Error::from)?;
            jsonl.write_all(b"\n")?;
            last = Some(r.clone());
            Ok(())
        };
        let result = run_method(cfg, which, &domains, &mut on_step);
        jsonl.flush().map_err(io_err(&metrics_path))?;
        drop(jsonl);
        let outcome = match result {
            Ok(o) => o,
            Err(e) => {
                log.line(&format!("{} failed: {e}", which.as_str()))?;
                if let RunError::Divergence(r) = &e {
                    if let Some(prev) = &last {
                        let prev = serde_json::to_string(prev).unwrap_or_default();
                        log.line(&format!("last finite step: {prev}"))?;
                    }
                    let r = serde_json::to_string(r).unwrap_or_default();
                    log.line(&format!("diverging step: {r}"))?;
                }
                return Err(e);
            }
        };

        for (t, net) in outcome.checkpoints.iter().enumerate() {
            write_file(
                &ckpt_dir.join(format!("after_domain_{}.llck", t + 1)),
                &net.save_checkpoint(),
            )?;
        }
        if let Some(buf) = &outcome.buffer {
            write_file(&dir.join("replay_buffer.llrb"), &buf.save())?;
        }
        write_file(
            &dir.join("accuracy_matrix.csv"),
            outcome.metrics.to_csv().as_bytes(),
        )?;
        let summary = Summary {
            method: which,
            seed: cfg.seed,
            domains: cfg.domains.iter().map(|d| d.name.clone()).collect(),
            steps: outcome.reports.len(),
            average: outcome.metrics.average,
            forgetting_per_domain: outcome.metrics.forgetting.clone(),
            accuracy_matrix: outcome.metrics.accuracy.clone(),
        };
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_file(&dir.join("summary.json"), json.as_bytes())?;
        log.line(&format!(
            "{} finished: {} steps, average {:.4}",
            which.as_str(),
            summary.steps,
            summary.average
        ))?;
        outcomes.push(outcome);
    }
    Ok(outcomes)
}
