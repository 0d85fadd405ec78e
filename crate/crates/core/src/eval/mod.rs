//! Cross-dataset evaluation, threshold sweeps, and reporting.

mod panels;
mod report;

use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, check_threshold, confusion_at, Aggregates, MetricPolicies, MetricRecord, MetricSummary};
use crate::model::{check_provenance, load_checkpoint, SegModel};
use crate::preprocess::resize_and_normalize;
use crate::train::predict_probs;

pub use panels::{render_panel, select_cases, write_predictions, PREDICTIONS_DIR};
pub use report::{emit_report, ReportInputs, ReportOutput};

/// Anything that maps preprocessed samples to probability maps.
pub trait Predictor {
    fn predict(&self, samples: &[Sample]) -> Result<Vec<Vec<f32>>>;
}

impl Predictor for SegModel {
    fn predict(&self, samples: &[Sample]) -> Result<Vec<Vec<f32>>> {
        predict_probs(self, samples, 4)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub threshold: f64,
    pub policies: MetricPolicies,
    pub image_side: usize,
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub records: Vec<MetricRecord>,
    /// Over every image.
    pub aggregates: Aggregates,
    /// Over images with at least one lesion pixel; `None` if there are none.
    pub aggregates_annotated: Option<Aggregates>,
    /// Resized, standardized samples in corpus order.
    pub prepared: Vec<Sample>,
    pub probabilities: Vec<Vec<f32>>,
}

fn prepare(corpus: &Corpus, side: usize) -> Result<Vec<Sample>> {
    corpus.samples.iter().map(|s| resize_and_normalize(s, side)).collect()
}

fn records_at(prepared: &[Sample], probs: &[Vec<f32>], threshold: f64, policies: &MetricPolicies) -> Result<Vec<MetricRecord>> {
    prepared
        .iter()
        .zip(probs)
        .map(|(s, p)| {
            let c = confusion_at(p, s.mask.as_slice().expect("standard layout"), threshold)?;
            Ok(MetricRecord::from_counts(&s.id, threshold, c, policies))
        })
        .collect()
}

fn annotated_aggregates(prepared: &[Sample], records: &[MetricRecord]) -> Result<Option<Aggregates>> {
    let subset: Vec<MetricRecord> = prepared
        .iter()
        .zip(records)
        .filter(|(s, _)| s.lesion_pixels() > 0)
        .map(|(_, r)| r.clone())
        .collect();
    if subset.is_empty() {
        Ok(None)
    } else {
        aggregate(&subset).map(Some)
    }
}

/// Per-image metrics at one threshold; no augmentation, no CLAHE.
pub fn evaluate(predictor: &dyn Predictor, corpus: &Corpus, opts: &EvalOptions) -> Result<EvalOutput> {
    check_threshold(opts.threshold)?;
    if corpus.is_empty() {
        return Err(Error::Invalid("cannot evaluate on an empty corpus".into()));
    }
    let prepared = prepare(corpus, opts.image_side)?;
    let probabilities = predictor.predict(&prepared)?;
    let records = records_at(&prepared, &probabilities, opts.threshold, &opts.policies)?;
    Ok(EvalOutput {
        aggregates: aggregate(&records)?,
        aggregates_annotated: annotated_aggregates(&prepared, &records)?,
        records,
        prepared,
        probabilities,
    })
}

/// Loads a checkpoint, warns on provenance mismatches, and evaluates it.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    corpus: &Corpus,
    opts: &EvalOptions,
    expected_train_corpus: Option<&str>,
    config_hash: Option<&str>,
) -> Result<EvalOutput> {
    let (model, meta) = load_checkpoint(checkpoint)?;
    check_provenance(&meta, expected_train_corpus, config_hash);
    if meta.image_side != opts.image_side {
        log::warn!(
            "checkpoint was trained at side {} but evaluation runs at {}",
            meta.image_side,
            opts.image_side
        );
    }
    evaluate(&model, corpus, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub dice: MetricSummary,
    pub iou: MetricSummary,
    pub recall: MetricSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub thresholds: Vec<f64>,
    pub per_threshold: Vec<SweepPoint>,
    /// Per-image records for each threshold, same order as `thresholds`.
    #[serde(skip)]
    pub records: Vec<Vec<MetricRecord>>,
}

impl SweepResult {
    pub fn point(&self, threshold: f64) -> Option<&SweepPoint> {
        self.per_threshold.iter().find(|p| p.threshold == threshold)
    }
}

/// `start:stop:step`, inclusive of `stop` when it lies on the grid.
pub fn parse_threshold_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("threshold grid must be start:stop:step, got `{spec}`")))?;
    let [start, stop, step] = parts[..] else {
        return Err(Error::Config(format!("threshold grid must be start:stop:step, got `{spec}`")));
    };
    if !(step > 0.0) || stop < start {
        return Err(Error::Config(format!("threshold grid `{spec}` is empty or has a non-positive step")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=n)
        .map(|i| ((start + i as f64 * step) * 1e10).round() / 1e10)
        .collect();
    validate_thresholds(&grid)?;
    Ok(grid)
}

pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

pub fn validate_thresholds(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::Config("at least one threshold is required".into()));
    }
    for &t in thresholds {
        check_threshold(t).map_err(|e| Error::Config(e.to_string()))?;
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("thresholds must be strictly increasing".into()));
    }
    Ok(())
}

fn sweep_from(prepared: &[Sample], mut probs_for: impl FnMut(usize) -> Result<Vec<f32>>, thresholds: &[f64], policies: &MetricPolicies) -> Result<SweepResult> {
    let mut records: Vec<Vec<MetricRecord>> = vec![Vec::with_capacity(prepared.len()); thresholds.len()];
    for (i, s) in prepared.iter().enumerate() {
        let p = probs_for(i)?;
        let gt = s.mask.as_slice().expect("standard layout");
        for (ti, &t) in thresholds.iter().enumerate() {
            let c = confusion_at(&p, gt, t)?;
            records[ti].push(MetricRecord::from_counts(&s.id, t, c, policies));
        }
    }
    let per_threshold = thresholds
        .iter()
        .zip(&records)
        .map(|(&t, r)| {
            let a = aggregate(r)?;
            Ok(SweepPoint {
                threshold: t,
                dice: a.dice,
                iou: a.iou,
                recall: a.recall,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult {
        thresholds: thresholds.to_vec(),
        per_threshold,
        records,
    })
}

/// One inference pass; probability maps go to an anonymous temp file and
/// every threshold is scored from the cache.
pub fn threshold_sweep(predictor: &dyn Predictor, corpus: &Corpus, thresholds: &[f64], opts: &EvalOptions) -> Result<SweepResult> {
    validate_thresholds(thresholds)?;
    let prepared = prepare(corpus, opts.image_side)?;
    let tmp_path = std::env::temp_dir();
    let mut cache = tempfile::tempfile().map_err(Error::io(&tmp_path))?;
    let mut offsets = Vec::with_capacity(prepared.len());
    let mut pos = 0u64;
    for chunk in prepared.chunks(4) {
        for p in predictor.predict(chunk)? {
            let bytes: Vec<u8> = p.iter().flat_map(|v| v.to_le_bytes()).collect();
            cache.write_all(&bytes).map_err(Error::io(&tmp_path))?;
            offsets.push((pos, p.len()));
            pos += bytes.len() as u64;
        }
    }
    sweep_from(
        &prepared,
        |i| {
            let (off, n) = offsets[i];
            cache.seek(SeekFrom::Start(off)).map_err(Error::io(&tmp_path))?;
            let mut buf = vec![0u8; n * 4];
            cache.read_exact(&mut buf).map_err(Error::io(&tmp_path))?;
            Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        },
        thresholds,
        &opts.policies,
    )
}

/// Reference implementation that re-runs inference for every image.
pub fn threshold_sweep_uncached(predictor: &dyn Predictor, corpus: &Corpus, thresholds: &[f64], opts: &EvalOptions) -> Result<SweepResult> {
    validate_thresholds(thresholds)?;
    let prepared = prepare(corpus, opts.image_side)?;
    sweep_from(
        &prepared,
        |i| Ok(predictor.predict(std::slice::from_ref(&prepared[i]))?.remove(0)),
        thresholds,
        &opts.policies,
    )
}

/// `sweep.csv`: `threshold,dice,iou,recall,n_dice,n_iou,n_recall`.
pub fn write_sweep_csv(path: &Path, sweep: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "dice", "iou", "recall", "n_dice", "n_iou", "n_recall"])?;
    for p in &sweep.per_threshold {
        w.write_record([
            format!("{}", p.threshold),
            crate::metrics::fmt_opt(p.dice.mean),
            crate::metrics::fmt_opt(p.iou.mean),
            crate::metrics::fmt_opt(p.recall.mean),
            p.dice.n_included.to_string(),
            p.iou.n_included.to_string(),
            p.recall.n_included.to_string(),
        ])?;
    }
    w.flush().map_err(Error::io(path))?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<SweepResult> {
    let mut r = csv::Reader::from_path(path)?;
    let mut per_threshold = Vec::new();
    for row in r.records() {
        let row = row?;
        let f = |i: usize| -> Result<Option<f64>> {
            let v = row.get(i).unwrap_or("");
            if v.is_empty() {
                return Ok(None);
            }
            v.parse()
                .map(Some)
                .map_err(|_| Error::Invalid(format!("bad value `{v}` in {}", path.display())))
        };
        let n = |i: usize| row.get(i).and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
        let summary = |m: usize, c: usize| -> Result<MetricSummary> {
            Ok(MetricSummary {
                mean: f(m)?,
                std: None,
                n_included: n(c),
            })
        };
        per_threshold.push(SweepPoint {
            threshold: f(0)?.ok_or_else(|| Error::Invalid("missing threshold".into()))?,
            dice: summary(1, 4)?,
            iou: summary(2, 5)?,
            recall: summary(3, 6)?,
        });
    }
    Ok(SweepResult {
        thresholds: per_threshold.iter().map(|p| p.threshold).collect(),
        per_threshold,
        records: Vec::new(),
    })
}

/// `eval_summary.json`: both aggregate variants and the policies used.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub checkpoint_model: String,
    pub corpus: String,
    pub threshold: f64,
    pub policies: MetricPolicies,
    pub all_images: Aggregates,
    pub annotated_images: Option<Aggregates>,
}
