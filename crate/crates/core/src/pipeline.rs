//! File-producing runs shared by the command-line tool and the tests.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::ExplainRecord;
use crate::checkpoint;
use crate::dataset::{write_text, DatasetSplit, Split};
use crate::error::{Error, Result};
use crate::model::{GavConfig, GavModel, PredictionRecord};
use crate::train::{self, EvalMetrics, SampleSet, TrainConfig, TrainState};

pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const EXPLAIN_FILE: &str = "explain.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: GavConfig,
    pub train: TrainConfig,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Split,
    pub auc: f64,
    #[serde(rename = "hits@100")]
    pub hits_100: Option<f64>,
    #[serde(rename = "hits@50")]
    pub hits_50: Option<f64>,
    #[serde(rename = "hits@20")]
    pub hits_20: Option<f64>,
    pub num_positives: usize,
    pub num_negatives: usize,
    pub param_count: usize,
    pub seed: u64,
    pub best_val_auc: Option<f64>,
    pub step: u64,
    pub config: RunConfig,
}

impl MetricsReport {
    pub fn new(split: Split, m: EvalMetrics, model: &GavModel, run: &RunConfig, best_val_auc: Option<f64>, step: u64) -> Self {
        Self {
            split,
            auc: m.auc,
            hits_100: m.hits_100,
            hits_50: m.hits_50,
            hits_20: m.hits_20,
            num_positives: m.num_positives,
            num_negatives: m.num_negatives,
            param_count: model.param_count(),
            seed: run.train.seed,
            best_val_auc,
            step,
            config: run.clone(),
        }
    }

    pub fn summary_line(&self) -> String {
        let fmt = |h: Option<f64>| h.map_or("n/a".to_string(), |x| format!("{x:.2}"));
        format!(
            "auc={:?} hits@100={} hits@50={} hits@20={} params={}",
            self.auc,
            fmt(self.hits_100),
            fmt(self.hits_50),
            fmt(self.hits_20),
            self.param_count
        )
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Outcome of [`run_training`].
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub state: TrainState,
    pub test: MetricsReport,
}

/// Trains on `data`, checkpointing into `out` after every validation, then
/// scores the best model on the test split and writes `metrics.json`.
///
/// With `resume`, training continues from `out/last`.
pub fn run_training(data: &DatasetSplit, run: &RunConfig, out: &Path, resume: bool) -> Result<TrainingRun> {
    run.model.validate()?;
    run.train.validate()?;
    if run.model.d_spatial != data.graph.dim() {
        return Err(Error::Config(format!(
            "model d_spatial {} does not match data dimension {}",
            run.model.d_spatial,
            data.graph.dim()
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let h = run.model.h;
    let train_set = SampleSet::from_split(data, Split::Train, h)?;
    let val_set = SampleSet::from_split(data, Split::Val, h)?;
    let test_set = SampleSet::from_split(data, Split::Test, h)?;
    let state = if resume {
        let state = checkpoint::load_train_state(out)?;
        if state.model.config != run.model {
            return Err(Error::Config("resume checkpoint was trained with a different model config".into()));
        }
        state
    } else {
        TrainState::new(run.model.clone(), &run.train)?
    };
    let state = train::train(&train_set, &val_set, &run.train, state, |s| {
        checkpoint::save_train_state(out, s, &run.train)
    })?;
    checkpoint::save_train_state(out, &state, &run.train)?;
    let best = state.best_model();
    let metrics = train::evaluate(best, &test_set, data.seed)?;
    let report = MetricsReport::new(Split::Test, metrics, best, run, state.best_val_auc(), state.step);
    write_json(&out.join(METRICS_FILE), &report)?;
    Ok(TrainingRun { state, test: report })
}

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x}")
    }
}

/// `predictions.csv` with header `u,v,label,prob,logit,angle_deg`.
pub fn predictions_csv(records: &[PredictionRecord]) -> String {
    let mut out = String::from("u,v,label,prob,logit,angle_deg\n");
    for r in records {
        let label = r.label.map_or(String::new(), |l| l.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.u,
            r.v,
            label,
            fmt_f64(r.probability),
            fmt_f64(r.logit),
            fmt_f64(r.angle_degrees)
        );
    }
    out
}

/// One JSON object per line. NaN angles are written as `null`.
pub fn explain_jsonl(records: &[ExplainRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Predictions for every sample of `split`, in file order.
pub fn predict_split(model: &GavModel, data: &DatasetSplit, split: Option<Split>) -> Result<Vec<PredictionRecord>> {
    use rayon::prelude::*;
    let samples: Vec<_> = data
        .samples
        .iter()
        .filter(|s| split.is_none_or(|sp| s.split == sp))
        .copied()
        .collect();
    samples
        .par_iter()
        .map(|s| model.predict(&data.graph, s.u, s.v, Some(s.label)))
        .collect()
}

/// Reads labelled scores from a CSV with a `label` column and a `score`
/// (or `prob`) column, such as `predictions.csv`. Returns (positives, negatives).
pub fn load_scores_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h));
    let (Some(label_col), Some(score_col)) = (col(&["label"]), col(&["score", "prob"])) else {
        return Err(parse_err(1, "expected a label column and a score or prob column".into()));
    };
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let label = rec.get(label_col).unwrap_or("");
        let score: f64 = rec
            .get(score_col)
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_err(line, format!("bad score in {rec:?}")))?;
        match label {
            "1" => pos.push(score),
            "0" => neg.push(score),
            other => return Err(parse_err(line, format!("label must be 0 or 1, got {other:?}"))),
        }
    }
    Ok((pos, neg))
}
