//! Training engine and the cross-validation / selection protocol.

mod observe;
mod scheduler;
mod summary;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use mammoseg_nn::{Adam, Forward, ParamStore, Session, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{split_kfold, Corpus, Sample};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, LossConfig};
use crate::metrics::{aggregate, confusion_at, MetricPolicies, MetricRecord};
use crate::model::{build_model, count_params, save_checkpoint, CheckpointMeta, ModelKind, ModelSpec, SegModel};
use crate::preprocess::{augment, resize_and_normalize, sample_rng, AugmentPolicy};

pub use observe::{CsvTrainLog, NoopObserver, TrainObserver};
pub use scheduler::{PlateauMode, PlateauScheduler, SchedulerConfig};
pub use summary::{read_cv_summary, write_cv_summary, CvSummary};

/// Validation threshold used during training.
pub const VAL_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub scheduler: SchedulerConfig,
    pub image_side: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub augment: AugmentPolicy,
    pub metrics: MetricPolicies,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 4,
            learning_rate: 1e-4,
            scheduler: SchedulerConfig::default(),
            image_side: 1024,
            seed: 0,
            loss: LossConfig::default(),
            augment: AugmentPolicy::default(),
            metrics: MetricPolicies::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.image_side < crate::preprocess::MIN_SIDE || self.image_side % crate::model::DOWNSAMPLING_FACTOR != 0 {
            return Err(Error::Config(format!(
                "image_side must be a multiple of {} and at least {}, got {}",
                crate::model::DOWNSAMPLING_FACTOR,
                crate::preprocess::MIN_SIDE,
                self.image_side
            )));
        }
        self.scheduler.validate(self.learning_rate)?;
        self.loss.validate()?;
        self.augment.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_bce: f64,
    pub train_dice_loss: f64,
    pub val_dice: Option<f64>,
    pub val_iou: Option<f64>,
    pub val_recall: Option<f64>,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    /// 1-based.
    pub best_epoch: usize,
    pub best_dice: f64,
    pub iou_at_best: Option<f64>,
    pub recall_at_best: Option<f64>,
    /// Digest of the weights before the first update.
    pub init_digest: String,
    pub train_ids: usize,
    pub val_ids: usize,
    pub epoch_log: Vec<EpochLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CVResult {
    pub model_name: ModelKind,
    pub params: usize,
    pub k: usize,
    pub seed: u64,
    pub fold_signature: String,
    pub mean_dice: f64,
    pub std_dice: f64,
    pub mean_iou: Option<f64>,
    pub std_iou: Option<f64>,
    pub mean_recall: Option<f64>,
    pub std_recall: Option<f64>,
    pub fold_results: Vec<FoldResult>,
}

impl CVResult {
    pub fn fold_dice(&self) -> Vec<f64> {
        self.fold_results.iter().map(|f| f.best_dice).collect()
    }
}

/// Preprocessed `[N, 1, S, S]` batch and its flattened binary target.
pub fn batch_tensor(samples: &[&Sample]) -> (Tensor, Vec<f32>) {
    let (h, w) = samples[0].image.dim();
    let mut x = Vec::with_capacity(samples.len() * h * w);
    let mut t = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        x.extend(s.image.iter());
        t.extend(s.mask.iter().map(|&m| m as f32));
    }
    (Tensor::from_vec(&[samples.len(), 1, h, w], x), t)
}

pub fn weights_digest(params: &ParamStore) -> String {
    let mut h = Sha256::new();
    for id in params.ids() {
        for v in params.get(id).data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Probability maps for already-preprocessed samples, evaluated in batches.
pub fn predict_probs(model: &SegModel, samples: &[Sample], batch_size: usize) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, _) = batch_tensor(&refs);
        let probs = model.predict_probs(&x)?;
        let per = probs.numel() / chunk.len();
        out.extend(probs.data().chunks(per).map(|c| c.to_vec()));
    }
    Ok(out)
}

/// Per-image records at `threshold` for already-preprocessed samples.
pub fn validate(
    model: &SegModel,
    samples: &[Sample],
    threshold: f64,
    policies: &MetricPolicies,
    batch_size: usize,
) -> Result<Vec<MetricRecord>> {
    let probs = predict_probs(model, samples, batch_size)?;
    samples
        .iter()
        .zip(&probs)
        .map(|(s, p)| {
            let c = confusion_at(p, s.mask.as_slice().expect("standard layout"), threshold)?;
            Ok(MetricRecord::from_counts(&s.id, threshold, c, policies))
        })
        .collect()
}

struct EpochStats {
    loss: f64,
    bce: f64,
    dice: f64,
}

/// One pass over `train` in a seed-determined order, with augmentation.
fn train_epoch(model: &mut SegModel, adam: &mut Adam, train: &[Sample], config: &TrainConfig, epoch: usize) -> Result<EpochStats> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut sample_rng(config.seed, epoch, "\u{0}batch-order"));
    let aug_seed = config.seed ^ config.augment.seed.rotate_left(17);
    let (mut loss_sum, mut bce_sum, mut dice_sum, mut batches) = (0.0, 0.0, 0.0, 0usize);
    for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
        let prepared = chunk
            .iter()
            .map(|&i| {
                let s = &train[i];
                let a = augment(s, &config.augment, &mut sample_rng(aug_seed, epoch, &s.id))?;
                resize_and_normalize(&a, config.image_side)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Sample> = prepared.iter().collect();
        let (x, target) = batch_tensor(&refs);

        let mut session = Session::train(model.params());
        let input = session.input(x);
        let logits = model.forward(&mut session, input);
        let out = combined_loss(logits.value().data(), &target, &config.loss)?;
        if !out.value.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: bi });
        }
        let seed = Tensor::from_vec(logits.shape(), out.grad.iter().map(|&g| g as f32).collect());
        let (graph, bn_updates) = session.finish();
        let grads = graph.backward(&logits, seed);
        if !grads.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: bi });
        }
        model.params_mut().apply_bn_updates(&bn_updates);
        adam.step(model.params_mut(), &grads);
        loss_sum += out.value;
        bce_sum += out.bce;
        dice_sum += out.dice;
        batches += 1;
    }
    let n = batches.max(1) as f64;
    Ok(EpochStats {
        loss: loss_sum / n,
        bce: bce_sum / n,
        dice: dice_sum / n,
    })
}

/// Trains a freshly initialized model on `train` and tracks the epoch with
/// the highest validation Dice.
pub fn train_fold(
    spec: &ModelSpec,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    fold_index: usize,
    observer: &mut dyn TrainObserver,
) -> Result<FoldResult> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Invalid("training and validation splits must both be non-empty".into()));
    }
    let mut model = build_model(spec, config.seed)?;
    let init_digest = weights_digest(model.params());
    let val_prepared = val
        .iter()
        .map(|s| resize_and_normalize(s, config.image_side))
        .collect::<Result<Vec<_>>>()?;

    let mut adam = Adam::new(config.learning_rate);
    let mut sched = PlateauScheduler::new(config.scheduler, PlateauMode::Max, config.learning_rate);
    let mut log: Vec<EpochLog> = Vec::with_capacity(config.epochs);
    let mut best: Option<usize> = None;
    for epoch in 1..=config.epochs {
        let lr = sched.lr();
        adam.lr = lr;
        let stats = train_epoch(&mut model, &mut adam, train, config, epoch)?;
        let records = validate(&model, &val_prepared, VAL_THRESHOLD, &config.metrics, config.batch_size)?;
        let agg = aggregate(&records)?;
        let entry = EpochLog {
            epoch,
            train_loss: stats.loss,
            train_bce: stats.bce,
            train_dice_loss: stats.dice,
            val_dice: agg.dice.mean,
            val_iou: agg.iou.mean,
            val_recall: agg.recall.mean,
            lr,
        };
        let dice = entry.val_dice.unwrap_or(0.0);
        sched.step(dice);
        observer.on_epoch(spec.name, Some(fold_index), &entry)?;
        let improved = best.is_none_or(|b| dice > log[b].val_dice.unwrap_or(0.0));
        log.push(entry);
        if improved {
            best = Some(log.len() - 1);
            observer.on_best(spec.name, fold_index, epoch, &model)?;
        }
    }
    let b = &log[best.expect("at least one epoch")];
    Ok(FoldResult {
        fold_index,
        best_epoch: b.epoch,
        best_dice: b.val_dice.unwrap_or(0.0),
        iou_at_best: b.val_iou,
        recall_at_best: b.val_recall,
        init_digest,
        train_ids: train.len(),
        val_ids: val.len(),
        epoch_log: log,
    })
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let s = crate::metrics::MetricSummary::from_values(values.iter().copied());
    (s.mean, s.std)
}

/// k-fold cross-validation; every fold starts from the same seeded initialization.
pub fn run_cv(
    spec: &ModelSpec,
    corpus: &Corpus,
    k: usize,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<CVResult> {
    config.validate()?;
    let folds = split_kfold(corpus, k, config.seed)?;
    let mut results = Vec::with_capacity(k);
    for fold in 0..k {
        let (tr, va) = folds.split(corpus, fold)?;
        let train_ids: HashSet<&str> = tr.iter().map(|&i| corpus.samples[i].id.as_str()).collect();
        if va.iter().any(|&i| train_ids.contains(corpus.samples[i].id.as_str())) {
            return Err(Error::Fold {
                fold,
                source: Box::new(Error::Invalid("validation sample leaked into training".into())),
            });
        }
        log::info!("{} fold {}/{k}: {} train, {} val", spec.name, fold + 1, tr.len(), va.len());
        let r = train_fold(spec, &corpus.subset(&tr), &corpus.subset(&va), config, fold, observer).map_err(|e| {
            Error::Fold {
                fold,
                source: Box::new(e),
            }
        })?;
        results.push(r);
    }
    let dice: Vec<f64> = results.iter().map(|r| r.best_dice).collect();
    let iou: Vec<f64> = results.iter().filter_map(|r| r.iou_at_best).collect();
    let recall: Vec<f64> = results.iter().filter_map(|r| r.recall_at_best).collect();
    let (mean_dice, std_dice) = mean_std(&dice);
    let (mean_iou, std_iou) = mean_std(&iou);
    let (mean_recall, std_recall) = mean_std(&recall);
    let params = count_params(&build_model(&ModelSpec { pretrained: false, ..spec.clone() }, config.seed)?);
    Ok(CVResult {
        model_name: spec.name,
        params,
        k,
        seed: config.seed,
        fold_signature: folds.signature(),
        mean_dice: mean_dice.unwrap_or(0.0),
        std_dice: std_dice.unwrap_or(0.0),
        mean_iou,
        std_iou,
        mean_recall,
        std_recall,
        fold_results: results,
    })
}

/// Highest mean Dice; ties go to fewer parameters, then to the smaller key.
pub fn select_best(results: &[CVResult]) -> Result<ModelKind> {
    results
        .iter()
        .min_by(|a, b| {
            b.mean_dice
                .total_cmp(&a.mean_dice)
                .then(a.params.cmp(&b.params))
                .then(a.model_name.key().cmp(b.model_name.key()))
        })
        .map(|r| r.model_name)
        .ok_or_else(|| Error::Invalid("no cross-validation results to select from".into()))
}

pub struct FullTraining {
    pub checkpoint: PathBuf,
    pub model: SegModel,
    pub epoch_log: Vec<EpochLog>,
}

/// Trains on the whole corpus, stepping the scheduler on the training loss,
/// and saves the final-epoch weights.
pub fn train_full(
    spec: &ModelSpec,
    corpus: &Corpus,
    config: &TrainConfig,
    checkpoint: &Path,
    config_hash: &str,
    observer: &mut dyn TrainObserver,
) -> Result<FullTraining> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Invalid("cannot train on an empty corpus".into()));
    }
    let mut model = build_model(spec, config.seed)?;
    let mut adam = Adam::new(config.learning_rate);
    let mut sched = PlateauScheduler::new(config.scheduler, PlateauMode::Min, config.learning_rate);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let lr = sched.lr();
        adam.lr = lr;
        let stats = train_epoch(&mut model, &mut adam, &corpus.samples, config, epoch)?;
        sched.step(stats.loss);
        let entry = EpochLog {
            epoch,
            train_loss: stats.loss,
            train_bce: stats.bce,
            train_dice_loss: stats.dice,
            val_dice: None,
            val_iou: None,
            val_recall: None,
            lr,
        };
        observer.on_epoch(spec.name, None, &entry)?;
        log.push(entry);
    }
    let meta = CheckpointMeta {
        spec: spec.clone(),
        epochs: config.epochs,
        corpus: corpus.name.clone(),
        config_hash: config_hash.to_string(),
        image_side: config.image_side,
        seed: config.seed,
    };
    save_checkpoint(checkpoint, &model, &meta)?;
    Ok(FullTraining {
        checkpoint: checkpoint.to_path_buf(),
        model,
        epoch_log: log,
    })
}
