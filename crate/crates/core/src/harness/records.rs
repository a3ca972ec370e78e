use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluator::EvaluationResult;
use crate::tensorfile::write_atomic;
use crate::trainer::StepLog;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const STD_ESTIMATOR: &str = "population";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub evaluation: EvaluationResult,
    pub sgd_steps: usize,
    pub memory_updates: usize,
    pub final_loss: Option<f64>,
    pub train_examples: usize,
    pub parameter_count: usize,
    pub loss_trace: PathBuf,
    pub encoder_checkpoint: PathBuf,
    pub memory_checkpoint: PathBuf,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub config_hash: String,
    pub config: RunConfig,
    /// `(p, q, #DAM, #DAC, #DAS)`.
    pub tuple: [usize; 5],
    pub per_seed: Vec<SeedResult>,
    pub failures: Vec<SeedFailure>,
    pub mean_final_aa: Option<f64>,
    pub std_final_aa: Option<f64>,
    pub std_estimator: String,
    pub wall_clock_secs: f64,
    pub status: RunStatus,
}

impl MetricsRecord {
    pub fn accuracies(&self) -> Vec<f64> {
        self.per_seed.iter().map(|s| s.evaluation.final_average_accuracy).collect()
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Serialize)]
struct LossRow<'a> {
    config_hash: &'a str,
    step: usize,
    stream_batch: usize,
    iteration: usize,
    loss: f64,
    memory_fill: usize,
    batch_size: usize,
    views: usize,
    elapsed_ms: f64,
}

pub fn write_loss_trace(path: &Path, config_hash: &str, steps: &[StepLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for step in steps {
        w.serialize(LossRow {
            config_hash,
            step: step.step,
            stream_batch: step.stream_batch,
            iteration: step.iteration,
            loss: step.loss,
            memory_fill: step.memory_fill,
            batch_size: step.batch_size,
            views: step.views,
            elapsed_ms: step.elapsed_ms,
        })
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_loss_trace(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let headers = r.headers().map_err(csv_error)?.clone();
    let col = headers
        .iter()
        .position(|h| h == "loss")
        .ok_or_else(|| Error::Config(format!("{} has no loss column", path.display())))?;
    r.records()
        .map(|row| {
            let row = row.map_err(csv_error)?;
            row[col].parse().map_err(|_| Error::Config(format!("bad loss value {:?}", &row[col])))
        })
        .collect()
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

static RECORD_LOCK: Mutex<()> = Mutex::new(());

pub fn load_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Appends `record` to the JSON-lines file under `out` and regenerates the
/// CSV summary. Both files are replaced atomically.
pub fn persist_record(out: &Path, record: &MetricsRecord) -> Result<()> {
    let _guard = RECORD_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    let path = out.join(METRICS_FILE);
    let mut records = load_records(&path)?;
    records.push(record.clone());
    let mut jsonl = String::new();
    for r in &records {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    write_atomic(&path, jsonl.as_bytes())?;
    write_summary(&out.join(SUMMARY_FILE), &records)
}

#[derive(Serialize)]
struct SummaryRow {
    config_hash: String,
    dataset: String,
    num_tasks: usize,
    memory_size: usize,
    mem_batch_size: usize,
    p: usize,
    q: usize,
    dam: usize,
    dac: usize,
    das: usize,
    desk_scale: bool,
    seeds: String,
    accuracies: String,
    mean_final_aa: Option<f64>,
    std_final_aa_population: Option<f64>,
    status: String,
}

pub fn write_summary(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        let c = &r.config;
        w.serialize(SummaryRow {
            config_hash: r.config_hash.clone(),
            dataset: serde_json::to_value(c.dataset)?.as_str().unwrap_or_default().to_string(),
            num_tasks: c.num_tasks,
            memory_size: c.memory_size,
            mem_batch_size: c.mem_batch_size,
            p: r.tuple[0],
            q: r.tuple[1],
            dam: r.tuple[2],
            dac: r.tuple[3],
            das: r.tuple[4],
            desk_scale: c.desk_scale,
            seeds: c.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
            accuracies: r.accuracies().iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(";"),
            mean_final_aa: r.mean_final_aa,
            std_final_aa_population: r.std_final_aa,
            status: format!("{:?}", r.status).to_lowercase(),
        })
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(path, &bytes)
}
