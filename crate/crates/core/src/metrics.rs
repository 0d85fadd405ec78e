//! Thresholding, confusion counts, and per-image Dice / IoU / Recall.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts over the pixels of one compared pair of masks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// What a metric evaluates to when its denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmptyPolicy {
    One,
    Zero,
    Exclude,
}

impl EmptyPolicy {
    fn resolve(self) -> Option<f64> {
        match self {
            EmptyPolicy::One => Some(1.0),
            EmptyPolicy::Zero => Some(0.0),
            EmptyPolicy::Exclude => None,
        }
    }
}

impl std::str::FromStr for EmptyPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(Self::One),
            "zero" => Ok(Self::Zero),
            "exclude" => Ok(Self::Exclude),
            _ => Err(Error::Config(format!("empty policy must be one|zero|exclude, got `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricPolicies {
    pub dice: EmptyPolicy,
    pub iou: EmptyPolicy,
    pub recall: EmptyPolicy,
}

impl Default for MetricPolicies {
    fn default() -> Self {
        Self {
            dice: EmptyPolicy::One,
            iou: EmptyPolicy::One,
            recall: EmptyPolicy::Exclude,
        }
    }
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Invalid(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    Ok(())
}

/// Pixel is foreground iff `prob >= threshold`.
pub fn binarize(prob_map: &[f32], threshold: f64) -> Result<Vec<u8>> {
    check_threshold(threshold)?;
    Ok(prob_map.iter().map(|&p| (p as f64 >= threshold) as u8).collect())
}

pub fn confusion(pred_mask: &[u8], gt_mask: &[u8]) -> Result<ConfusionCounts> {
    if pred_mask.len() != gt_mask.len() {
        return Err(Error::Invalid(format!(
            "prediction has {} pixels, ground truth has {}",
            pred_mask.len(),
            gt_mask.len()
        )));
    }
    let (mut tp, mut pp, mut gp) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred_mask.iter().zip(gt_mask) {
        let (p, g) = ((p != 0) as u64, (g != 0) as u64);
        tp += p & g;
        pp += p;
        gp += g;
    }
    let n = pred_mask.len() as u64;
    Ok(ConfusionCounts {
        tp,
        fp: pp - tp,
        fn_: gp - tp,
        tn: n + tp - pp - gp,
    })
}

/// Confusion counts of `binarize(prob_map, threshold)` without materializing the mask.
pub fn confusion_at(prob_map: &[f32], gt_mask: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_threshold(threshold)?;
    if prob_map.len() != gt_mask.len() {
        return Err(Error::Invalid(format!(
            "probability map has {} pixels, ground truth has {}",
            prob_map.len(),
            gt_mask.len()
        )));
    }
    let (mut tp, mut pp, mut gp) = (0u64, 0u64, 0u64);
    for (&p, &g) in prob_map.iter().zip(gt_mask) {
        let (p, g) = ((p as f64 >= threshold) as u64, (g != 0) as u64);
        tp += p & g;
        pp += p;
        gp += g;
    }
    let n = prob_map.len() as u64;
    Ok(ConfusionCounts {
        tp,
        fp: pp - tp,
        fn_: gp - tp,
        tn: n + tp - pp - gp,
    })
}

fn ratio(num: u64, den: u64, policy: EmptyPolicy) -> Option<f64> {
    if den == 0 {
        policy.resolve()
    } else {
        Some(num as f64 / den as f64)
    }
}

/// `2TP / (2TP + FP + FN)`
pub fn dice_score(c: ConfusionCounts, policy: EmptyPolicy) -> Option<f64> {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, policy)
}

/// `TP / (TP + FP + FN)`
pub fn iou_score(c: ConfusionCounts, policy: EmptyPolicy) -> Option<f64> {
    ratio(c.tp, c.tp + c.fp + c.fn_, policy)
}

/// `TP / (TP + FN)`
pub fn recall_score(c: ConfusionCounts, policy: EmptyPolicy) -> Option<f64> {
    ratio(c.tp, c.tp + c.fn_, policy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub sample_id: String,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub dice: Option<f64>,
    pub iou: Option<f64>,
    pub recall: Option<f64>,
}

impl MetricRecord {
    pub fn from_counts(sample_id: &str, threshold: f64, counts: ConfusionCounts, policies: &MetricPolicies) -> Self {
        Self {
            sample_id: sample_id.to_string(),
            threshold,
            counts,
            dice: dice_score(counts, policies.dice),
            iou: iou_score(counts, policies.iou),
            recall: recall_score(counts, policies.recall),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_included: usize,
}

impl MetricSummary {
    /// Mean and sample standard deviation (n - 1); a single value has std 0.
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self {
                mean: None,
                std: None,
                n_included: 0,
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self {
            mean: Some(mean),
            std: Some(std),
            n_included: v.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub dice: MetricSummary,
    pub iou: MetricSummary,
    pub recall: MetricSummary,
}

/// Per-image (macro) averages over the defined values of each metric.
pub fn aggregate(records: &[MetricRecord]) -> Result<Aggregates> {
    if records.is_empty() {
        return Err(Error::Invalid("cannot aggregate an empty record list".into()));
    }
    Ok(Aggregates {
        dice: MetricSummary::from_values(records.iter().filter_map(|r| r.dice)),
        iou: MetricSummary::from_values(records.iter().filter_map(|r| r.iou)),
        recall: MetricSummary::from_values(records.iter().filter_map(|r| r.recall)),
    })
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes `eval_records.csv`; undefined metrics are empty cells.
pub fn write_eval_records(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "threshold", "tp", "fp", "fn", "tn", "dice", "iou", "recall"])?;
    for r in records {
        w.write_record([
            r.sample_id.clone(),
            format!("{}", r.threshold),
            r.counts.tp.to_string(),
            r.counts.fp.to_string(),
            r.counts.fn_.to_string(),
            r.counts.tn.to_string(),
            fmt_opt(r.dice),
            fmt_opt(r.iou),
            fmt_opt(r.recall),
        ])?;
    }
    w.flush().map_err(Error::io(path))?;
    Ok(())
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Invalid(format!("bad metric value `{s}`")))
}

pub fn read_eval_records(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or("");
        let int = |i: usize| -> Result<u64> {
            get(i)
                .parse()
                .map_err(|_| Error::Invalid(format!("bad count `{}` in {}", get(i), path.display())))
        };
        out.push(MetricRecord {
            sample_id: get(0).to_string(),
            threshold: parse_opt(get(1))?.unwrap_or(f64::NAN),
            counts: ConfusionCounts {
                tp: int(2)?,
                fp: int(3)?,
                fn_: int(4)?,
                tn: int(5)?,
            },
            dice: parse_opt(get(6))?,
            iou: parse_opt(get(7))?,
            recall: parse_opt(get(8))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn binarize_uses_inclusive_threshold() {
        assert_eq!(binarize(&[0.5; 3], 0.5).unwrap(), vec![1, 1, 1]);
        assert_eq!(binarize(&[0.1, 0.4, 0.6, 0.9], 0.5).unwrap(), vec![0, 0, 1, 1]);
        assert!(binarize(&[0.5], 1.0).is_err());
        assert!(binarize(&[0.5], 0.0).is_err());
    }

    #[test]
    fn confusion_hand_cases() {
        assert_eq!(confusion(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap(), counts(1, 1, 1, 1));
        let gt: Vec<u8> = (0..100).map(|i| (i < 30) as u8).collect();
        assert_eq!(confusion(&gt, &gt).unwrap(), counts(30, 0, 0, 70));
        let inv: Vec<u8> = gt.iter().map(|&g| 1 - g).collect();
        let c = confusion(&inv, &gt).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
        assert!(confusion(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn scores_and_policies() {
        let c = counts(50, 25, 25, 0);
        assert!((dice_score(c, EmptyPolicy::One).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou_score(c, EmptyPolicy::One), Some(0.5));
        assert_eq!(recall_score(counts(30, 0, 10, 0), EmptyPolicy::One), Some(0.75));
        let empty = counts(0, 0, 0, 9);
        assert_eq!(dice_score(empty, EmptyPolicy::One), Some(1.0));
        assert_eq!(dice_score(empty, EmptyPolicy::Zero), Some(0.0));
        assert_eq!(recall_score(empty, EmptyPolicy::Exclude), None);
        assert_eq!(iou_score(counts(0, 3, 4, 0), EmptyPolicy::One), Some(0.0));
        assert_eq!(recall_score(counts(5, 7, 0, 0), EmptyPolicy::Zero), Some(1.0));
    }

    #[test]
    fn aggregate_conventions() {
        let rec = |d: Option<f64>| MetricRecord {
            sample_id: "s".into(),
            threshold: 0.5,
            counts: ConfusionCounts::default(),
            dice: d,
            iou: d,
            recall: d,
        };
        let a = aggregate(&[rec(Some(0.7))]).unwrap();
        assert_eq!((a.dice.mean, a.dice.std), (Some(0.7), Some(0.0)));
        let a = aggregate(&[rec(Some(0.4)), rec(Some(0.6)), rec(None)]).unwrap();
        assert!((a.dice.mean.unwrap() - 0.5).abs() < 1e-12);
        assert!((a.dice.std.unwrap() - 0.141_421_356).abs() < 1e-6);
        assert_eq!(a.dice.n_included, 2);
        let a = aggregate(&[rec(None)]).unwrap();
        assert_eq!((a.recall.mean, a.recall.n_included), (None, 0));
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn eval_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval_records.csv");
        let recs = vec![
            MetricRecord::from_counts("a", 0.5, counts(3, 1, 0, 4), &MetricPolicies::default()),
            MetricRecord::from_counts("b", 0.5, counts(0, 0, 0, 8), &MetricPolicies::default()),
        ];
        write_eval_records(&path, &recs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sample_id,threshold,tp,fp,fn,tn,dice,iou,recall\n"));
        assert!(text.contains("b,0.5,0,0,0,8,1,1,\n"));
        assert_eq!(read_eval_records(&path).unwrap(), recs);
    }

    proptest! {
        #[test]
        fn dice_iou_identity(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
            prop_assume!(tp + fp + fn_ > 0);
            let c = counts(tp, fp, fn_, 0);
            let d = dice_score(c, EmptyPolicy::Exclude).unwrap();
            let j = iou_score(c, EmptyPolicy::Exclude).unwrap();
            prop_assert!((d - 2.0 * j / (1.0 + j)).abs() < 1e-12);
            prop_assert!(d >= j);
        }

        #[test]
        fn recall_is_nested_under_thresholds(
            px in prop::collection::vec((0.0f32..=1.0, prop::bool::ANY), 1..200),
            t1 in 0.01f64..0.99, t2 in 0.01f64..0.99,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let p: Vec<f32> = px.iter().map(|x| x.0).collect();
            let g: Vec<u8> = px.iter().map(|x| x.1 as u8).collect();
            let a = confusion_at(&p, &g, lo).unwrap();
            let b = confusion_at(&p, &g, hi).unwrap();
            prop_assert!(b.tp <= a.tp);
            prop_assert!(b.tp + b.fp <= a.tp + a.fp);
        }
    }
}
