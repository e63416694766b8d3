//! Training steps and the epoch loop with best-dev selection.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::autodiff::{Mat, Tape};
use crate::contrastive::{nt_xent_loss_and_grad, ContrastiveBatch};
use crate::corpus::{DatasetBundle, Instance, Stance};
use crate::derive_seed;
use crate::encoder::{Mode, Vocab};
use crate::error::{Error, Result};
use crate::fusion::FusionKind;
use crate::harness::evaluate::evaluate_instances;
use crate::harness::metrics::HeadlineMetric;
use crate::training::optim::{clip_global_norm, Adam};
use crate::training::{Checkpoint, EpochRecord, ModelConfig, StanceModel, TrainConfig, Variant};

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

/// Losses of one step, measured before the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 1-based index of the update.
    pub step: usize,
    pub cls_loss: f64,
    pub cl_loss: f64,
    /// λ·‖Θ‖².
    pub l2_loss: f64,
    pub total_loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

/// Loss components and dense gradients for one batch.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub cls_loss: f64,
    pub cl_loss: f64,
    pub params_sq_norm: f64,
    pub total_loss: f64,
    pub grads: Vec<Mat>,
}

pub struct Trainer {
    pub model: StanceModel,
    pub config: TrainConfig,
    optimizer: Adam,
    dropout_rng: ChaCha8Rng,
    step: usize,
}

fn one_hot(batch: &[&Instance]) -> Result<Array2<f64>> {
    let mut y = Array2::zeros((batch.len(), Stance::COUNT));
    for (i, inst) in batch.iter().enumerate() {
        let label = inst
            .label
            .ok_or_else(|| Error::contract(format!("training instance {} has no label", inst.id)))?;
        y[[i, label.index()]] = 1.0;
    }
    Ok(y)
}

impl Trainer {
    pub fn new(model: StanceModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            optimizer: Adam::new(&model.store, config.learning_rate),
            dropout_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, DROPOUT_STREAM)),
            model,
            config,
            step: 0,
        })
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> usize {
        self.step
    }

    /// Forward and backward pass over `batch` without updating parameters.
    /// Draws dropout masks from the trainer's stream.
    pub fn batch_loss(&mut self, batch: &[&Instance]) -> Result<BatchLoss> {
        if batch.is_empty() {
            return Err(Error::contract("empty training batch"));
        }
        let labels = one_hot(batch)?;
        let eta = self.config.effective_eta();
        let lambda = self.config.l2_coefficient;
        let model = &self.model;
        let mut tape = Tape::new(&model.store);
        let mut mode = Mode::Stochastic(&mut self.dropout_rng);

        let mut probs = Vec::with_capacity(batch.len());
        let mut views = Vec::with_capacity(2 * batch.len());
        for inst in batch {
            let vars = model.forward(&mut tape, inst, &mut mode)?;
            let second = model.extra_view(&mut tape, inst, &mut mode)?;
            probs.push(vars.probs);
            views.push(vars.h);
            views.push(second);
        }
        let probs = tape.concat_rows(&probs);
        let cls = tape.cross_entropy(probs, labels);
        if tape.clamped_count() > 0 {
            warn!(
                clamped = tape.clamped_count(),
                "predicted probability at a gold label fell below 1e-12 and was clamped"
            );
        }

        let stacked = tape.concat_rows(&views);
        let projections = model.project_rows(&mut tape, stacked);
        let cl_batch = ContrastiveBatch::new(tape.value(projections).clone(), self.config.temperature)?;
        let (cl_value, cl_grad) = nt_xent_loss_and_grad(&cl_batch)?;
        let cl = if self.config.detach_contrastive {
            tape.constant(Mat::from_elem((1, 1), cl_value))
        } else {
            tape.custom_scalar(projections, cl_value, cl_grad)
        };
        let weighted = tape.scale(cl, eta);
        let objective = tape.add(cls, weighted);
        let cls_value = tape.scalar(cls);
        let gradients = tape.backward(objective);
        drop(tape);

        let mut grads = gradients.into_dense(&model.store);
        let params_sq_norm = model.store.squared_norm();
        if lambda > 0.0 {
            for (g, (_, theta)) in grads.iter_mut().zip(model.store.iter()) {
                g.scaled_add(2.0 * lambda, theta);
            }
        }
        let total_loss = cls_value + eta * cl_value + lambda * params_sq_norm;
        if !total_loss.is_finite() {
            let ids: Vec<&str> = batch.iter().map(|i| i.id.as_str()).collect();
            return Err(Error::Numerical(format!(
                "non-finite loss at step {} (cls={cls_value}, cl={cl_value}, l2={params_sq_norm}); batch ids: {ids:?}",
                self.step + 1
            )));
        }
        Ok(BatchLoss {
            cls_loss: cls_value,
            cl_loss: cl_value,
            params_sq_norm,
            total_loss,
            grads,
        })
    }

    /// One joint update over `batch`.
    pub fn train_step(&mut self, batch: &[&Instance]) -> Result<StepMetrics> {
        let BatchLoss {
            cls_loss,
            cl_loss,
            params_sq_norm,
            total_loss,
            mut grads,
        } = self.batch_loss(batch)?;
        let grad_norm = match self.config.grad_clip {
            Some(c) => clip_global_norm(&mut grads, c),
            None => crate::training::optim::global_norm(&grads),
        };
        self.optimizer.update(&mut self.model.store, &grads);
        self.step += 1;
        let metrics = StepMetrics {
            step: self.step,
            cls_loss,
            cl_loss,
            l2_loss: self.config.l2_coefficient * params_sq_norm,
            total_loss,
            grad_norm,
        };
        debug!(?metrics, "train step");
        Ok(metrics)
    }

    pub fn into_model(self) -> StanceModel {
        self.model
    }
}

/// Vocabulary over the training split's targets, texts and masked texts.
pub fn training_vocab(train: &[Instance]) -> Vocab {
    let texts = train.iter().flat_map(|i| {
        [Some(i.target.as_str()), Some(i.text.as_str()), i.masked_text.as_deref()]
            .into_iter()
            .flatten()
    });
    Vocab::build(texts, 1)
}

/// Builds a fresh model for `bundle` with the variant applied.
pub fn build_model(bundle: &DatasetBundle, model_config: &ModelConfig, train_config: &TrainConfig) -> Result<StanceModel> {
    let mut cfg = model_config.clone();
    if train_config.variant == Variant::Concat {
        cfg.fusion = FusionKind::Concat;
    }
    StanceModel::init(&cfg, training_vocab(&bundle.train), train_config.seed)
}

/// Called at step 0 with `None` and after every update with its metrics.
pub type Observer<'a> = dyn FnMut(&StanceModel, Option<&StepMetrics>) -> Result<()> + 'a;

pub fn fit(
    bundle: &DatasetBundle,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    metric: HeadlineMetric,
) -> Result<Checkpoint> {
    fit_with_observer(bundle, model_config, train_config, metric, &mut |_, _| Ok(()))
}

/// Trains for up to `epochs` epochs and returns the best-dev checkpoint.
pub fn fit_with_observer(
    bundle: &DatasetBundle,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    metric: HeadlineMetric,
    observer: &mut Observer,
) -> Result<Checkpoint> {
    train_config.validate()?;
    if bundle.train.is_empty() || bundle.dev.is_empty() {
        return Err(Error::contract("fit needs non-empty train and dev splits"));
    }
    let model = build_model(bundle, model_config, train_config)?;
    let mut trainer = Trainer::new(model, train_config.clone())?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(train_config.seed, SHUFFLE_STREAM));
    let mut order: Vec<usize> = (0..bundle.train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, crate::autodiff::ParamStore)> = None;
    let mut since_best = 0;

    observer(&trainer.model, None)?;
    for epoch in 0..train_config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut cls, mut cl, mut total, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(train_config.batch_size) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &bundle.train[i]).collect();
            let m = trainer.train_step(&batch)?;
            cls += m.cls_loss;
            cl += m.cl_loss;
            total += m.total_loss;
            steps += 1;
            observer(&trainer.model, Some(&m))?;
        }
        let report = evaluate_instances(&trainer.model, &bundle.dev, bundle.protocol, metric, train_config.seed)?;
        let dev_metric = report.headline;
        if dev_metric.is_nan() {
            return Err(Error::Numerical(format!("dev metric is NaN after epoch {epoch}")));
        }
        let n = steps as f64;
        let record = EpochRecord {
            epoch,
            cls_loss: cls / n,
            cl_loss: cl / n,
            total_loss: total / n,
            dev_metric,
        };
        info!(
            epoch,
            cls_loss = record.cls_loss,
            cl_loss = record.cl_loss,
            dev_metric,
            "epoch finished"
        );
        history.push(record);
        if best.as_ref().is_none_or(|(_, m, _)| dev_metric > *m) {
            best = Some((epoch, dev_metric, trainer.model.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if train_config.patience.is_some_and(|p| since_best >= p) {
                info!(epoch, "early stopping");
                break;
            }
        }
    }
    let (epoch, _, store) = best.expect("at least one epoch");
    let mut model = trainer.into_model();
    model.store = store;
    Ok(Checkpoint {
        model,
        train_config: train_config.clone(),
        epoch,
        seed: train_config.seed,
        history,
    })
}

/// Index of the best dev score; ties go to the earliest epoch.
pub fn best_epoch(dev_history: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &m) in dev_history.iter().enumerate() {
        if best.is_none_or(|b| m > dev_history[b]) {
            best = Some(i);
        }
    }
    best
}
