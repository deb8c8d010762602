//! Mini-batch training with the cross-entropy loss plus an optional
//! weighted parity penalty, evaluation, and the multi-seed comparison
//! harness.

pub mod reproduce;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset, Split};
use crate::engine::{AdamConfig, AdamState, EngineError, Graph, Tensor};
use crate::fairness::{parity_penalty, ConfigEcho, FairnessError, FairnessReport, GroupedPredictions};
use crate::models::{Batch, Classifier, FeatureLayout, ForwardCtx, ModelError, ModelSpec};
use crate::seed::{self, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fairness(#[from] FairnessError),
    #[error("training diverged in epoch {epoch} (last finite epoch: {last_finite})", last_finite = .last_finite_epoch.map_or("none".to_string(), |e| e.to_string()))]
    Diverged { epoch: usize, last_finite_epoch: Option<usize>, log: Vec<EpochStats> },
}

impl From<EngineError> for TrainError {
    fn from(e: EngineError) -> Self {
        TrainError::Model(ModelError::Engine(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the parity penalty; 0 trains on cross-entropy alone.
    pub lambda: f64,
    pub seed: u64,
    /// Epochs without a lower training loss before stopping.
    pub patience: usize,
    /// Whether the sensitive attribute is a model input.
    pub include_sensitive: bool,
    pub threshold: f64,
    /// Build the penalty term even when `lambda` is 0, so its value is
    /// logged. The gradient is unchanged.
    #[serde(default)]
    pub track_penalty: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 256,
            learning_rate: 1e-3,
            lambda: 0.0,
            seed: 0,
            patience: 10,
            include_sensitive: true,
            threshold: 0.5,
            track_penalty: false,
        }
    }
}

impl TrainConfig {
    /// Default penalty weight of a constrained run.
    pub const DEFAULT_LAMBDA: f64 = 1.0;

    /// The constrained setting: sensitive attribute removed from the
    /// inputs and the penalty switched on.
    pub fn constrained(self, lambda: f64) -> Self {
        TrainConfig { lambda, include_sensitive: false, ..self }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be a finite value >= 0, got {}", self.lambda));
        }
        if self.epochs == 0 || self.patience == 0 {
            return bad("epochs and patience must be positive".into());
        }
        if self.batch_size == 0 || (self.lambda > 0.0 && self.batch_size < 2) {
            return bad(format!("batch_size {} is too small (>= 2 needed with a penalty)", self.batch_size));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must be in [0, 1], got {}", self.threshold));
        }
        Ok(())
    }

    fn uses_penalty(&self) -> bool {
        self.lambda > 0.0 || self.track_penalty
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Row-weighted mean of the full objective.
    pub loss: f64,
    pub bce: f64,
    /// Row-weighted mean penalty over batches holding both groups.
    pub penalty: Option<f64>,
    /// Batches that held a single group and so had no penalty.
    pub single_group_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stopped_early: bool,
}

/// Trains `model` in place on `data`, which must already be the feature
/// view the model was built for. Keeps the parameters of the epoch with
/// the lowest training loss.
pub fn train(model: &mut Classifier, data: &Dataset, cfg: &TrainConfig) -> Result<TrainLog, TrainError> {
    cfg.validate()?;
    model.check_layout(&FeatureLayout::from_meta(&data.meta))?;
    if data.row_count == 0 {
        return Err(TrainError::Config("empty training set".into()));
    }
    let mut shuffle_rng = seed::rng(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = seed::rng(cfg.seed, Stream::Dropout);
    let dropout = model.spec().dropout;
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(cfg.learning_rate), model.params().tensors());
    let mut order: Vec<usize> = (0..data.row_count).collect();
    let mut log: Vec<EpochStats> = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut stats = EpochStats { epoch, loss: 0.0, bce: 0.0, penalty: None, single_group_batches: 0 };
        let (mut pen_sum, mut pen_rows) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let diverged = || TrainError::Diverged {
                epoch,
                last_finite_epoch: epoch.checked_sub(1).filter(|&e| e > 0),
                log: log.clone(),
            };
            let batch = Batch::from_dataset(data, chunk);
            let mut g = Graph::new();
            let p = model.params().bind(&mut g);
            let mut ctx = ForwardCtx::train(dropout, &mut dropout_rng);
            let probs = match model.forward(&mut g, &p, &batch, &mut ctx) {
                Err(ModelError::Engine(EngineError::NonFinite { .. })) => return Err(diverged()),
                other => other?,
            };
            let targets =
                Tensor::new(vec![chunk.len(), 1], chunk.iter().map(|&r| f64::from(data.labels[r])).collect())?;
            let bce = g.binary_cross_entropy(probs, &targets)?;
            let mut loss = bce;
            if cfg.uses_penalty() {
                let groups: Vec<u8> = chunk.iter().map(|&r| data.sensitive[r]).collect();
                match parity_penalty(&mut g, probs, &groups)? {
                    Some(pen) => {
                        pen_sum += g.value(pen).item().expect("scalar") * chunk.len() as f64;
                        pen_rows += chunk.len();
                        let weighted = g.scale(pen, cfg.lambda)?;
                        loss = g.add(bce, weighted)?;
                    }
                    None => stats.single_group_batches += 1,
                }
            }
            let loss_value = g.value(loss).item().expect("scalar");
            if !loss_value.is_finite() {
                return Err(diverged());
            }
            match g.backward(loss) {
                Err(EngineError::NonFinite { .. }) => return Err(diverged()),
                other => other?,
            }
            let grads: Vec<Vec<f64>> = p
                .iter()
                .zip(model.params().tensors())
                .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
                .collect();
            adam.step(model.params_mut().tensors_mut(), &grads)?;
            stats.loss += loss_value * chunk.len() as f64;
            stats.bce += g.value(bce).item().expect("scalar") * chunk.len() as f64;
        }
        let n = data.row_count as f64;
        stats.loss /= n;
        stats.bce /= n;
        stats.penalty = (pen_rows > 0).then(|| pen_sum / pen_rows as f64);
        if model.params().tensors().iter().any(|t| !t.is_finite()) {
            return Err(TrainError::Diverged {
                epoch,
                last_finite_epoch: epoch.checked_sub(1).filter(|&e| e > 0),
                log,
            });
        }
        let improved = best.as_ref().is_none_or(|(b, _, _)| stats.loss < *b);
        log.push(stats);
        if improved {
            best = Some((log[epoch - 1].loss, epoch, model.params().tensors().to_vec()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_loss, best_epoch, params) = best.expect("at least one epoch ran");
    model.params_mut().tensors_mut().clone_from_slice(&params);
    Ok(TrainLog { epochs: log, best_epoch, best_loss, stopped_early })
}

/// Rows per forward pass when predictions do not depend on batch mates.
const EVAL_CHUNK: usize = 1024;

/// Evaluation-mode scores for every row of `data`. Row-coupled models are
/// scored in mini-batches of `batch_size` whose composition is drawn from
/// `seed`; the others are scored in fixed chunks.
pub fn predict(model: &Classifier, data: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<f64>, TrainError> {
    let n = data.row_count;
    let mut order: Vec<usize> = (0..n).collect();
    let chunk = if model.kind().couples_rows() {
        order.shuffle(&mut seed::rng(seed, Stream::BatchComposition));
        batch_size.max(1)
    } else {
        EVAL_CHUNK
    };
    let mut scores = vec![0.0; n];
    for rows in order.chunks(chunk) {
        let p = model.predict_proba(&Batch::from_dataset(data, rows))?;
        for (&r, s) in rows.iter().zip(p) {
            scores[r] = s;
        }
    }
    Ok(scores)
}

/// Everything recorded about one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub model: ModelSpec,
    pub config: TrainConfig,
    pub sensitive_mapping: String,
    pub train_rows: usize,
    pub test_rows: usize,
    pub parameter_count: usize,
    pub log: TrainLog,
    /// Seed of the evaluation batch composition (row-coupled models only).
    pub eval_composition_seed: Option<u64>,
    pub duration_secs: f64,
    pub report: Option<FairnessReport>,
}

/// Output of [`run`]: the trained model, its record and the test scores.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: Classifier,
    pub record: RunRecord,
    pub predictions: GroupedPredictions,
}

pub fn echo(dataset: &str, spec: &ModelSpec, cfg: &TrainConfig, sensitive_mapping: &str) -> ConfigEcho {
    ConfigEcho {
        model: spec.kind.as_str().to_string(),
        dataset: dataset.to_string(),
        seed: cfg.seed,
        lambda: cfg.lambda,
        sensitive_mapping: sensitive_mapping.to_string(),
        sensitive_feature_included: cfg.include_sensitive,
        threshold: cfg.threshold,
    }
}

/// Scores `test` and computes its fairness report.
pub fn evaluate(
    model: &Classifier,
    test: &Dataset,
    cfg: &TrainConfig,
    echo: ConfigEcho,
) -> Result<(FairnessReport, GroupedPredictions), TrainError> {
    let scores = predict(model, test, cfg.batch_size, cfg.seed)?;
    let gp = GroupedPredictions::new(scores, test.labels.clone(), test.sensitive.clone(), cfg.threshold)?;
    Ok((FairnessReport::compute(&gp, echo)?, gp))
}

/// Builds a model for `spec` (its seed replaced by `cfg.seed`), trains it
/// on the split's training part and evaluates it on the test part.
pub fn run(spec: ModelSpec, split: &Split, cfg: &TrainConfig) -> Result<RunOutput, TrainError> {
    let start = Instant::now();
    let spec = ModelSpec { seed: cfg.seed, ..spec };
    let train_view = split.train.feature_view(cfg.include_sensitive);
    let test_view = split.test.feature_view(cfg.include_sensitive);
    let mut model = Classifier::new(spec, FeatureLayout::from_meta(&train_view.meta))?;
    let log = train(&mut model, &train_view, cfg)?;
    let meta = &split.train.meta;
    let echo = echo(&meta.name, &spec, cfg, &meta.sensitive_mapping);
    let (report, predictions) = evaluate(&model, &test_view, cfg, echo)?;
    let record = RunRecord {
        dataset: meta.name.clone(),
        model: spec,
        config: cfg.clone(),
        sensitive_mapping: meta.sensitive_mapping.clone(),
        train_rows: split.train.row_count,
        test_rows: split.test.row_count,
        parameter_count: model.parameter_count(),
        log,
        eval_composition_seed: spec.kind.couples_rows().then_some(cfg.seed),
        duration_secs: start.elapsed().as_secs_f64(),
        report: Some(report),
    };
    Ok(RunOutput { model, record, predictions })
}
