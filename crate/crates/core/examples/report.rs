//! Report tables and figures from synthetic harness outputs.
//!
//! `cargo run --example report -- [out_dir]`

use mammoseg::dataset::{generate_phantom_corpus, Sample};
use mammoseg::eval::{default_thresholds, emit_report, evaluate, threshold_sweep, write_predictions, EvalOptions, Predictor, ReportInputs};
use mammoseg::metrics::MetricPolicies;
use mammoseg::model::ModelKind;
use mammoseg::stats::{pairwise_compare, ZeroPolicy};
use mammoseg::train::{CVResult, CvSummary, FoldResult};

/// Blurs the ground truth into a soft map so the metrics are imperfect.
struct Blurry;

impl Predictor for Blurry {
    fn predict(&self, samples: &[Sample]) -> mammoseg::Result<Vec<Vec<f32>>> {
        Ok(samples
            .iter()
            .map(|s| {
                let (h, w) = s.mask.dim();
                let mut p = vec![0.0f32; h * w];
                for y in 0..h {
                    for x in 0..w {
                        let mut acc = 0.0;
                        for (dy, dx) in [(0i64, 0i64), (-3, 0), (3, 0), (0, -3), (0, 3)] {
                            let (yy, xx) = ((y as i64 + dy + 2).clamp(0, h as i64 - 1), (x as i64 + dx).clamp(0, w as i64 - 1));
                            acc += s.mask[[yy as usize, xx as usize]] as f32;
                        }
                        p[y * w + x] = acc / 5.0;
                    }
                }
                p
            })
            .collect())
    }
}

fn cv(kind: ModelKind, folds: [f64; 5]) -> CVResult {
    let mean = folds.iter().sum::<f64>() / 5.0;
    let std = (folds.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
    CVResult {
        model_name: kind,
        params: 0,
        k: 5,
        seed: 0,
        fold_signature: "example".into(),
        mean_dice: mean,
        std_dice: std,
        mean_iou: None,
        std_iou: None,
        mean_recall: None,
        std_recall: None,
        fold_results: folds
            .iter()
            .enumerate()
            .map(|(i, &d)| FoldResult {
                fold_index: i,
                best_epoch: 1,
                best_dice: d,
                iou_at_best: None,
                recall_at_best: None,
                init_digest: String::new(),
                train_ids: 0,
                val_ids: 0,
                epoch_log: Vec::new(),
            })
            .collect(),
    }
}

fn main() -> mammoseg::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = out.unwrap_or_else(|| tmp.path().join("report"));

    let results = vec![
        cv(ModelKind::MobileNetV2Scse, [0.62, 0.55, 0.48, 0.67, 0.57]),
        cv(ModelKind::MobileNetV2, [0.60, 0.57, 0.52, 0.63, 0.55]),
        cv(ModelKind::FastScnn, [0.40, 0.33, 0.35, 0.42, 0.34]),
    ];
    let stats = pairwise_compare(&results, ZeroPolicy::WilcoxDrop)?;

    let corpus = generate_phantom_corpus(8, 128, 4)?;
    let opts = EvalOptions {
        threshold: 0.5,
        policies: MetricPolicies::default(),
        image_side: 128,
    };
    let eval = evaluate(&Blurry, &corpus, &opts)?;
    let preds = dir.join("predictions");
    write_predictions(&preds, &eval, opts.threshold)?;
    let sweep = threshold_sweep(&Blurry, &corpus, &default_thresholds(), &opts)?;

    let report = emit_report(
        &dir,
        &ReportInputs {
            cv: Some(CvSummary {
                config_hash: "example".into(),
                results,
            }),
            stats: Some(stats),
            eval_records: Some(eval.records),
            sweep: Some(sweep),
            predictions_dir: Some(preds),
            q: 2,
        },
    )?;
    for p in report.tables.iter().chain(&report.figures).chain(&report.panels) {
        println!("{}", p.display());
    }
    Ok(())
}
