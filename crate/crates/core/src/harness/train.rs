use std::path::Path;
use std::time::Instant;

use dml_autodiff::{AutodiffError, Graph, ParameterStore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{prepare_data, ExperimentConfig, PreparedData, TrainingConfig};
use crate::backbones::BackboneKind;
use crate::data::{batch_iterator, DatasetKind, TaskKind};
use crate::dml::HeadVariant;
use crate::error::{Error, Result};
use crate::metrics::{auc, consistency_counts, mse, EvalReport, TaskMetric};
use crate::model::{analytic_param_count, FieldSpec, ModelConfig, MultiTaskModel};
use crate::nn::{save_checkpoint, Adam};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: Option<Validation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub metrics: Vec<TaskMetric>,
    /// Mean AUC over classification tasks (or negative mean MSE when
    /// there are none).
    pub primary: f64,
    pub neg_mse: f64,
}

impl Validation {
    fn beats(&self, other: &Validation) -> bool {
        self.primary > other.primary
            || (self.primary == other.primary && self.neg_mse > other.neg_mse)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
        message: String,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTimings {
    pub train_secs: f64,
    pub eval_secs: f64,
}

/// Everything recorded about one (model, seed) run. Wall-clock timings
/// are kept out of the serialised record so reports stay reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub dataset: DatasetKind,
    pub model: String,
    pub backbone: BackboneKind,
    pub variant: HeadVariant,
    pub seed: u64,
    pub status: RunStatus,
    pub trainable_params: usize,
    pub analytic_params: usize,
    pub best_epoch: Option<usize>,
    pub checkpoint: Option<String>,
    pub report: Option<EvalReport>,
    pub curve: Vec<EpochRecord>,
    #[serde(skip)]
    pub timings: RunTimings,
}

impl RunArtifact {
    /// Test value of a task metric, or `consistency` / `reversed`.
    pub fn metric(&self, name: &str) -> Option<f64> {
        let report = self.report.as_ref()?;
        match name {
            "consistency" => report.consistency_ratio,
            "reversed" => report.reversed_ratio,
            task => report.metric(task),
        }
    }
}

/// Builds the model for `config` on the fields of `data`.
pub fn build_model(config: &ModelConfig, data: &PreparedData) -> Result<MultiTaskModel> {
    let fields: Vec<FieldSpec> = data
        .dataset
        .fields
        .iter()
        .map(|f| FieldSpec::new(f.name.clone(), f.vocab_size))
        .collect();
    MultiTaskModel::new(config.clone(), data.dataset.tasks.clone(), &fields)
}

/// Predictions for every example in `part`, one vector per task.
pub fn predict_part(
    model: &MultiTaskModel,
    params: &ParameterStore,
    data: &PreparedData,
    part: &[u32],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![Vec::with_capacity(part.len()); model.tasks().len()];
    for batch in batch_iterator(&data.dataset, part, batch_size, None)? {
        let preds = model.predict(params, &batch?)?;
        for (acc, p) in out.iter_mut().zip(preds) {
            acc.extend(p);
        }
    }
    Ok(out)
}

/// Task metrics plus `(consistency, reversed)` ratios.
pub type PartEvaluation = (Vec<TaskMetric>, Option<(f64, f64)>);

/// Task metrics (AUC or MSE) and, for two-task data, the consistency
/// tallies on `part`.
pub fn evaluate_part(
    model: &MultiTaskModel,
    params: &ParameterStore,
    data: &PreparedData,
    part: &[u32],
    training: &TrainingConfig,
    with_consistency: bool,
) -> Result<PartEvaluation> {
    let preds = predict_part(model, params, data, part, training.eval_batch_size)?;
    let examples = &data.dataset.examples;
    let mut metrics = Vec::new();
    for (k, task) in model.tasks().iter().enumerate() {
        let labels: Vec<f64> = part
            .iter()
            .map(|&i| examples[i as usize].labels[k])
            .collect();
        let (metric, value) = match task.kind {
            TaskKind::Classification => ("auc", auc(&preds[k], &labels)?),
            TaskKind::Regression => ("mse", mse(&preds[k], &labels)?),
        };
        metrics.push(TaskMetric {
            task: task.name.clone(),
            metric: metric.into(),
            value,
        });
    }
    let consistency = if with_consistency && preds.len() == 2 {
        let ratings: Vec<u8> = part.iter().map(|&i| examples[i as usize].rating).collect();
        match consistency_counts(
            &ratings,
            &preds[0],
            &preds[1],
            training.max_pairs,
            training.metric_seed,
        ) {
            Ok(c) => Some((c.ratio(), c.reversed_ratio())),
            Err(Error::UndefinedMetric(msg)) => {
                log::warn!("consistency ratio undefined: {msg}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok((metrics, consistency))
}

fn validation_summary(metrics: Vec<TaskMetric>) -> Validation {
    let mean_of = |kind: &str| {
        let v: Vec<f64> = metrics
            .iter()
            .filter(|m| m.metric == kind)
            .map(|m| m.value)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let neg_mse = mean_of("mse").map_or(0.0, |m| -m);
    let primary = mean_of("auc").unwrap_or(neg_mse);
    Validation {
        metrics,
        primary,
        neg_mse,
    }
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Autodiff(AutodiffError::NonFinite { .. }))
}

/// Trains one model for one seed and evaluates its best-validation
/// parameters on the test part.
pub fn train_run(
    model_config: &ModelConfig,
    data: &PreparedData,
    training: &TrainingConfig,
    seed: u64,
    checkpoint_dir: Option<&Path>,
) -> Result<RunArtifact> {
    let model = build_model(model_config, data)?;
    let mut params = model.init(seed)?;
    let vocab_sizes = data.dataset.field_vocab_sizes();
    let mut artifact = RunArtifact {
        dataset: data.dataset.kind,
        model: model_config.id(),
        backbone: model_config.backbone.kind,
        variant: model_config.variant,
        seed,
        status: RunStatus::Completed,
        trainable_params: params.num_trainable(),
        analytic_params: analytic_param_count(model_config, model.tasks().len(), &vocab_sizes),
        best_epoch: None,
        checkpoint: None,
        report: None,
        curve: Vec::new(),
        timings: RunTimings::default(),
    };
    let mut adam = Adam::new(training.adam());
    let mut best: Option<(Validation, ParameterStore)> = None;
    let mut stale = 0usize;
    let mut train_secs = 0.0;
    let mut eval_secs = 0.0;

    'epochs: for epoch in 0..training.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let iter = batch_iterator(
            &data.dataset,
            &data.split.train,
            training.batch_size,
            Some((seed, epoch as u64)),
        )?;
        for (step, batch) in iter.enumerate() {
            let batch = batch?;
            let outcome = (|| -> Result<f64> {
                let mut g = Graph::new(&params);
                let nodes = model.forward(&mut g, &batch, None)?;
                let loss = model.loss(&mut g, &batch, nodes.predictions())?;
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Ok(value);
                }
                let grads = g.backward(loss)?;
                let grads = g.param_grads(&grads);
                drop(g);
                adam.step(&mut params, &grads)?;
                Ok(value)
            })();
            let value = match outcome {
                Ok(v) => v,
                Err(e) if is_divergence(&e) => f64::NAN,
                Err(e) => return Err(e),
            };
            if !value.is_finite() || params.iter().any(|(_, t)| !t.is_finite()) {
                let message =
                    format!("seed {seed} diverged at epoch {epoch}, step {step}: loss {value}");
                log::error!("{}: {message}", artifact.model);
                artifact.status = RunStatus::Diverged {
                    epoch,
                    step,
                    loss: value,
                    message,
                };
                break 'epochs;
            }
            loss_sum += value;
            batches += 1;
        }
        train_secs += started.elapsed().as_secs_f64();
        let train_loss = loss_sum / batches.max(1) as f64;

        let validate = (epoch + 1) % training.eval_every == 0 || epoch + 1 == training.epochs;
        let validation = if validate {
            let started = Instant::now();
            let (metrics, _) = evaluate_part(
                &model,
                &params,
                data,
                &data.split.validation,
                training,
                false,
            )?;
            eval_secs += started.elapsed().as_secs_f64();
            Some(validation_summary(metrics))
        } else {
            None
        };
        log::info!(
            "{} seed {seed} epoch {epoch}: loss {train_loss:.5}{}",
            artifact.model,
            validation
                .as_ref()
                .map(|v| format!(", validation primary {:.5}", v.primary))
                .unwrap_or_default()
        );
        artifact.curve.push(EpochRecord {
            epoch,
            train_loss,
            validation: validation.clone(),
        });
        if let Some(v) = validation {
            if best.as_ref().is_none_or(|(b, _)| v.beats(b)) {
                artifact.best_epoch = Some(epoch);
                best = Some((v, params.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= training.patience {
                    break;
                }
            }
        }
    }

    if let Some((_, best_params)) = best {
        let started = Instant::now();
        let (tasks, consistency) =
            evaluate_part(&model, &best_params, data, &data.split.test, training, true)?;
        eval_secs += started.elapsed().as_secs_f64();
        artifact.report = Some(EvalReport {
            seed,
            model: artifact.model.clone(),
            examples: data.split.test.len(),
            tasks,
            consistency_ratio: consistency.map(|c| c.0),
            reversed_ratio: consistency.map(|c| c.1),
        });
        if let Some(dir) = checkpoint_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let name = format!(
                "{}_{}_{}_seed{seed}.ckpt",
                artifact.dataset, artifact.backbone, artifact.variant
            );
            save_checkpoint(&best_params, &dir.join(&name))?;
            artifact.checkpoint = Some(format!("checkpoints/{name}"));
        }
    }
    artifact.timings = RunTimings {
        train_secs,
        eval_secs,
    };
    Ok(artifact)
}

/// Runs every (backbone, variant, seed) combination of `config`. Seeds
/// run in parallel, each with its own parameters and optimiser.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunArtifact>> {
    config.validate()?;
    let data = prepare_data(&config.dataset)?;
    run_experiment_on(config, &data)
}

/// [`run_experiment`] on already prepared data.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    data: &PreparedData,
) -> Result<Vec<RunArtifact>> {
    let checkpoint_dir = config
        .training
        .save_checkpoints
        .then(|| config.output_dir.join("checkpoints"));
    let mut artifacts = Vec::new();
    for model_config in config.model.configs() {
        let runs = config
            .training
            .seeds
            .par_iter()
            .map(|&seed| {
                train_run(
                    &model_config,
                    data,
                    &config.training,
                    seed,
                    checkpoint_dir.as_deref(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        artifacts.extend(runs);
    }
    Ok(artifacts)
}
