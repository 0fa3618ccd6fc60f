//! Mini-batch training with early stopping on validation AUC, and evaluation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, Mat, Tape};
use crate::dataset::{DatasetSplit, LinkSample, Split};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::metrics;
use crate::model::{GavConfig, GavModel, LineGraphInputs};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Validation interval in optimizer steps; training always ends with one.
    pub eval_every: u64,
    /// Hard cap on optimizer steps, if any.
    pub max_steps: Option<u64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            eval_every: 2000,
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.eval_every == 0 || self.max_epochs == 0 {
            return Err(Error::Config("eval_every and max_epochs must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// Line-graph tensors of a set of samples, in sample order.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub samples: Vec<LinkSample>,
    pub inputs: Vec<LineGraphInputs>,
}

impl SampleSet {
    pub fn build(g: &SpatialGraph, samples: Vec<LinkSample>, h: usize) -> Result<Self> {
        let inputs = samples
            .par_iter()
            .map(|s| {
                let sub = crate::subgraph::extract_enclosing_subgraph(g, s.u, s.v, h)?;
                LineGraphInputs::new(&crate::linegraph::build_line_graph(&sub))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples, inputs })
    }

    pub fn from_split(split: &DatasetSplit, which: Split, h: usize) -> Result<Self> {
        Self::build(&split.graph, split.samples_in(which).copied().collect(), h)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Logits for every sample, in order.
pub fn score(model: &GavModel, set: &SampleSet) -> Result<Vec<f64>> {
    set.inputs
        .par_iter()
        .map(|inp| {
            let mut tape = Tape::new(&model.store);
            let fwd = model.forward(&mut tape, inp)?;
            Ok(tape.scalar(fwd.logit))
        })
        .collect()
}

/// Ranking metrics of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub auc: f64,
    /// `None` when the negative pool is smaller than `k`.
    #[serde(rename = "hits@100")]
    pub hits_100: Option<f64>,
    #[serde(rename = "hits@50")]
    pub hits_50: Option<f64>,
    #[serde(rename = "hits@20")]
    pub hits_20: Option<f64>,
    pub num_positives: usize,
    pub num_negatives: usize,
}

/// AUC and Hits@{20,50,100} from labelled scores; the negative pool is drawn with `pool_seed`.
pub fn metrics_from_scores(samples: &[LinkSample], scores: &[f64], pool_seed: u64) -> Result<EvalMetrics> {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (s, &x) in samples.iter().zip(scores) {
        if s.is_positive() {
            pos.push(x)
        } else {
            neg.push(x)
        }
    }
    metrics_from_labelled(&pos, &neg, pool_seed)
}

/// Same as [`metrics_from_scores`] with scores already separated by label.
pub fn metrics_from_labelled(pos: &[f64], neg: &[f64], pool_seed: u64) -> Result<EvalMetrics> {
    let auc = metrics::auc(pos, neg)?;
    let pool = metrics::negative_pool(neg, pool_seed);
    let hits = |k: usize| -> Result<Option<f64>> {
        if k > pool.len() {
            Ok(None)
        } else {
            metrics::hits_at_k(pos, &pool, k).map(Some)
        }
    };
    Ok(EvalMetrics {
        auc,
        hits_100: hits(100)?,
        hits_50: hits(50)?,
        hits_20: hits(20)?,
        num_positives: pos.len(),
        num_negatives: neg.len(),
    })
}

pub fn evaluate(model: &GavModel, set: &SampleSet, pool_seed: u64) -> Result<EvalMetrics> {
    let scores = score(model, set)?;
    metrics_from_scores(&set.samples, &scores, pool_seed)
}

/// Mean loss and mean gradient of a batch. Samples run in parallel; the
/// reduction follows batch order so results do not depend on scheduling.
pub fn batch_gradients(model: &GavModel, set: &SampleSet, batch: &[usize]) -> Result<(f64, Vec<Option<Mat>>)> {
    let per_sample = batch
        .par_iter()
        .map(|&i| {
            let mut tape = Tape::new(&model.store);
            let y = f64::from(set.samples[i].label);
            let (_, loss) = model.loss(&mut tape, &set.inputs[i], y)?;
            Ok((tape.scalar(loss), tape.backward(loss).into_params()))
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads: Vec<Option<Mat>> = vec![None; model.store.len()];
    for (loss, g) in per_sample {
        total += loss;
        for (acc, g) in grads.iter_mut().zip(g) {
            if let Some(g) = g {
                match acc {
                    Some(a) => a.scaled_add(scale, &g),
                    None => *acc = Some(g * scale),
                }
            }
        }
    }
    Ok((total * scale, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: u64,
    pub epoch: usize,
    /// Mean batch loss since the previous evaluation.
    pub train_loss: f64,
    pub val_auc: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: GavModel,
    pub adam: AdamState,
    pub step: u64,
    pub epoch: usize,
    /// Batches of the current epoch already consumed.
    pub batch_in_epoch: usize,
    pub best: Option<BestModel>,
    pub evals_since_best: usize,
    pub history: Vec<HistoryEntry>,
    /// Loss of every optimizer step.
    pub losses: Vec<f64>,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestModel {
    pub model: GavModel,
    pub val_auc: f64,
    pub step: u64,
}

impl TrainState {
    pub fn new(model_config: GavConfig, config: &TrainConfig) -> Result<Self> {
        let model = GavModel::new(model_config, config.seed)?;
        let adam = AdamState::new(&model.store, config.lr);
        Ok(Self {
            model,
            adam,
            step: 0,
            epoch: 0,
            batch_in_epoch: 0,
            best: None,
            evals_since_best: 0,
            history: Vec::new(),
            losses: Vec::new(),
            stopped_early: false,
        })
    }

    pub fn best_val_auc(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.val_auc)
    }

    /// The best validated model, or the current one if none was validated.
    pub fn best_model(&self) -> &GavModel {
        self.best.as_ref().map_or(&self.model, |b| &b.model)
    }
}

/// Trains until early stopping, `max_epochs` or `max_steps`.
///
/// `on_eval` runs after every validation with the updated state.
pub fn train(
    train_set: &SampleSet,
    val_set: &SampleSet,
    config: &TrainConfig,
    mut state: TrainState,
    mut on_eval: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training needs nonempty train and validation splits".into()));
    }
    state.adam.lr = config.lr;
    let mut since_eval = Vec::new();
    let steps_left = |s: &TrainState| config.max_steps.is_none_or(|m| s.step < m);

    let mut validate = |state: &mut TrainState, losses: &mut Vec<f64>| -> Result<()> {
        let val_auc = evaluate(&state.model, val_set, config.seed)?.auc;
        let train_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        losses.clear();
        state.history.push(HistoryEntry {
            step: state.step,
            epoch: state.epoch,
            train_loss,
            val_auc,
        });
        log::info!("step {} epoch {} loss {train_loss:.5} val auc {val_auc:.5}", state.step, state.epoch);
        if state.best_val_auc().is_none_or(|b| val_auc > b) {
            state.best = Some(BestModel {
                model: state.model.clone(),
                val_auc,
                step: state.step,
            });
            state.evals_since_best = 0;
        } else {
            state.evals_since_best += 1;
            if state.evals_since_best >= config.patience {
                state.stopped_early = true;
            }
        }
        on_eval(state)
    };

    while state.epoch < config.max_epochs && !state.stopped_early && steps_left(&state) {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::indexed_stream(config.seed, "train.shuffle", state.epoch as u64));
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        while state.batch_in_epoch < batches.len() && !state.stopped_early && steps_left(&state) {
            let (loss, grads) = batch_gradients(&state.model, train_set, batches[state.batch_in_epoch])?;
            if !loss.is_finite() {
                return Err(Error::Domain(format!("non-finite training loss at step {}", state.step)));
            }
            state.model.store.accumulate(&grads, 1.0);
            state.adam.step(&mut state.model.store);
            state.step += 1;
            state.batch_in_epoch += 1;
            state.losses.push(loss);
            since_eval.push(loss);
            if state.step % config.eval_every == 0 {
                validate(&mut state, &mut since_eval)?;
            }
        }
        if state.batch_in_epoch == batches.len() {
            state.epoch += 1;
            state.batch_in_epoch = 0;
        }
    }
    if state.history.last().is_none_or(|h| h.step != state.step) {
        validate(&mut state, &mut since_eval)?;
    }
    Ok(state)
}
