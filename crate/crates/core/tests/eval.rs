use mammoseg::dataset::{generate_phantom_corpus, Corpus, CorpusRole, Sample};
use mammoseg::eval::{
    default_thresholds, emit_report, evaluate, parse_threshold_grid, read_sweep_csv, select_cases, threshold_sweep,
    threshold_sweep_uncached, write_predictions, write_sweep_csv, EvalOptions, Predictor, ReportInputs,
};
use mammoseg::metrics::{confusion, MetricPolicies, MetricRecord};
use ndarray::Array2;
use std::cell::Cell;

/// Emits the ground truth as saturated probabilities.
struct Oracle;

impl Predictor for Oracle {
    fn predict(&self, samples: &[Sample]) -> mammoseg::Result<Vec<Vec<f32>>> {
        Ok(samples.iter().map(|s| s.mask.iter().map(|&m| m as f32).collect()).collect())
    }
}

struct Null;

impl Predictor for Null {
    fn predict(&self, samples: &[Sample]) -> mammoseg::Result<Vec<Vec<f32>>> {
        Ok(samples.iter().map(|s| vec![0.0; s.mask.len()]).collect())
    }
}

/// Graded probabilities derived from the standardized image; counts calls.
#[derive(Default)]
struct Graded {
    calls: Cell<usize>,
}

impl Predictor for Graded {
    fn predict(&self, samples: &[Sample]) -> mammoseg::Result<Vec<Vec<f32>>> {
        self.calls.set(self.calls.get() + samples.len());
        Ok(samples
            .iter()
            .map(|s| s.image.iter().map(|&v| 1.0 / (1.0 + (-(v - 0.5) * 2.0).exp())).collect())
            .collect())
    }
}

fn opts(side: usize) -> EvalOptions {
    EvalOptions {
        threshold: 0.5,
        policies: MetricPolicies::default(),
        image_side: side,
    }
}

fn annotated_corpus() -> Corpus {
    let mut c = generate_phantom_corpus(12, 64, 3).unwrap();
    c.samples.retain(|s| s.lesion_pixels() > 0);
    c
}

#[test]
fn oracle_predictor_scores_one() {
    let corpus = generate_phantom_corpus(8, 64, 1).unwrap();
    let out = evaluate(&Oracle, &corpus, &opts(64)).unwrap();
    assert_eq!(out.records.len(), 8);
    assert_eq!(out.aggregates.dice.mean, Some(1.0));
    assert_eq!(out.aggregates.iou.mean, Some(1.0));
    assert_eq!(out.aggregates.recall.mean, Some(1.0));
}

#[test]
fn null_predictor_on_annotated_corpus_scores_zero() {
    let corpus = annotated_corpus();
    assert!(!corpus.is_empty());
    let out = evaluate(&Null, &corpus, &opts(64)).unwrap();
    assert_eq!(out.aggregates.dice.mean, Some(0.0));
    assert_eq!(out.aggregates.recall.mean, Some(0.0));
    assert_eq!(out.aggregates_annotated, Some(out.aggregates));
}

#[test]
fn annotated_aggregate_skips_normal_images() {
    let corpus = generate_phantom_corpus(8, 64, 1).unwrap();
    let normals = corpus.samples.iter().filter(|s| s.lesion_pixels() == 0).count();
    assert!(normals > 0);
    let out = evaluate(&Null, &corpus, &opts(64)).unwrap();
    // empty prediction on an empty mask counts as a perfect Dice
    assert_eq!(out.aggregates.dice.n_included, 8);
    let ann = out.aggregates_annotated.unwrap();
    assert_eq!(ann.dice.n_included, 8 - normals);
    assert_eq!(ann.dice.mean, Some(0.0));
}

#[test]
fn saturated_sweep_is_flat() {
    let corpus = generate_phantom_corpus(6, 64, 2).unwrap();
    let sweep = threshold_sweep(&Oracle, &corpus, &default_thresholds(), &opts(64)).unwrap();
    assert_eq!(sweep.per_threshold.len(), 9);
    for p in &sweep.per_threshold {
        assert_eq!(p.dice.mean, Some(1.0));
    }
}

#[test]
fn sweep_counts_match_brute_force_recount() {
    let corpus = generate_phantom_corpus(6, 64, 4).unwrap();
    let o = opts(64);
    let sweep = threshold_sweep(&Graded::default(), &corpus, &default_thresholds(), &o).unwrap();
    let prepared = evaluate(&Graded::default(), &corpus, &o).unwrap().prepared;
    let probs = Graded::default().predict(&prepared).unwrap();
    for (ti, &t) in sweep.thresholds.iter().enumerate() {
        for (si, s) in prepared.iter().enumerate() {
            let pred: Vec<u8> = probs[si].iter().map(|&p| (p as f64 >= t) as u8).collect();
            let mut tp = 0;
            let mut fp = 0;
            let mut fn_ = 0;
            for (&p, &g) in pred.iter().zip(s.mask.iter()) {
                match (p, g) {
                    (1, 1) => tp += 1,
                    (1, 0) => fp += 1,
                    (0, 1) => fn_ += 1,
                    _ => {}
                }
            }
            let c = sweep.records[ti][si].counts;
            assert_eq!((c.tp, c.fp, c.fn_), (tp, fp, fn_), "threshold {t} sample {si}");
            assert_eq!(c, confusion(&pred, s.mask.as_slice().unwrap()).unwrap());
        }
    }
}

#[test]
fn cached_sweep_runs_inference_once_and_matches_reinference() {
    let corpus = generate_phantom_corpus(6, 64, 5).unwrap();
    let g = Graded::default();
    let cached = threshold_sweep(&g, &corpus, &default_thresholds(), &opts(64)).unwrap();
    assert_eq!(g.calls.get(), 6);
    let fresh = threshold_sweep_uncached(&Graded::default(), &corpus, &default_thresholds(), &opts(64)).unwrap();
    assert_eq!(cached, fresh);
    assert_eq!(cached.records, fresh.records);
}

#[test]
fn sweep_agrees_with_standalone_evaluate_at_reference_threshold() {
    let corpus = generate_phantom_corpus(6, 64, 6).unwrap();
    let sweep = threshold_sweep(&Graded::default(), &corpus, &default_thresholds(), &opts(64)).unwrap();
    let single = evaluate(&Graded::default(), &corpus, &opts(64)).unwrap();
    let at = sweep.point(0.5).unwrap();
    assert_eq!(at.dice, single.aggregates.dice);
    assert_eq!(at.iou, single.aggregates.iou);
    assert_eq!(at.recall, single.aggregates.recall);
    assert_eq!(sweep.records[4], single.records);
}

#[test]
fn recall_never_increases_with_threshold() {
    let corpus = generate_phantom_corpus(10, 64, 7).unwrap();
    let sweep = threshold_sweep(&Graded::default(), &corpus, &default_thresholds(), &opts(64)).unwrap();
    let r: Vec<f64> = sweep.per_threshold.iter().map(|p| p.recall.mean.unwrap()).collect();
    assert!(r.windows(2).all(|w| w[1] <= w[0]), "{r:?}");
}

#[test]
fn threshold_grid_parsing() {
    assert_eq!(parse_threshold_grid("0.1:0.9:0.1").unwrap(), default_thresholds());
    assert_eq!(parse_threshold_grid("0.25:0.75:0.25").unwrap(), vec![0.25, 0.5, 0.75]);
    assert_eq!(parse_threshold_grid("0.5:0.5:0.1").unwrap(), vec![0.5]);
    for bad in ["0.1:0.9", "0:0.5:0.1", "0.5:1.0:0.25", "0.9:0.1:0.1", "0.1:0.9:0", "a:b:c"] {
        let e = parse_threshold_grid(bad).unwrap_err();
        assert!(e.is_config(), "{bad}: {e}");
    }
}

#[test]
fn sweep_csv_round_trip() {
    let corpus = generate_phantom_corpus(4, 64, 8).unwrap();
    let sweep = threshold_sweep(&Graded::default(), &corpus, &default_thresholds(), &opts(64)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sweep.csv");
    write_sweep_csv(&p, &sweep).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("threshold,dice,iou,recall,n_dice,n_iou,n_recall\n"));
    let back = read_sweep_csv(&p).unwrap();
    assert_eq!(back.thresholds, sweep.thresholds);
    for (a, b) in back.per_threshold.iter().zip(&sweep.per_threshold) {
        assert_eq!(a.dice.mean, b.dice.mean);
        assert_eq!(a.recall.n_included, b.recall.n_included);
    }
}

#[test]
fn evaluate_rejects_bad_inputs() {
    let corpus = generate_phantom_corpus(2, 64, 1).unwrap();
    let mut o = opts(64);
    o.threshold = 1.0;
    assert!(evaluate(&Oracle, &corpus, &o).is_err());
    let empty = Corpus {
        name: "none".into(),
        samples: Vec::new(),
        role: CorpusRole::ExternalTest,
    };
    assert!(evaluate(&Oracle, &empty, &opts(64)).is_err());
}

fn record(id: &str, dice: Option<f64>) -> MetricRecord {
    MetricRecord {
        sample_id: id.into(),
        threshold: 0.5,
        counts: Default::default(),
        dice,
        iou: dice,
        recall: dice,
    }
}

#[test]
fn case_selection() {
    let recs = vec![
        record("a", Some(0.2)),
        record("b", Some(0.9)),
        record("c", None),
        record("d", Some(0.5)),
        record("e", Some(0.9)),
    ];
    let (best, worst) = select_cases(&recs, 2);
    let ids = |v: &[&MetricRecord]| v.iter().map(|r| r.sample_id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&best), ["b", "e"]);
    assert_eq!(ids(&worst), ["a", "d"]);
    let (best, worst) = select_cases(&recs, 3);
    assert_eq!(best.len(), 3);
    assert_eq!(ids(&worst), ["a"]);
}

#[test]
fn report_requires_input() {
    let dir = tempfile::tempdir().unwrap();
    let e = emit_report(dir.path(), &ReportInputs::default()).unwrap_err();
    assert!(e.is_config());
}

#[test]
fn sweep_only_report() {
    let corpus = generate_phantom_corpus(4, 64, 9).unwrap();
    let sweep = threshold_sweep(&Graded::default(), &corpus, &default_thresholds(), &opts(64)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = emit_report(
        dir.path(),
        &ReportInputs {
            sweep: Some(sweep),
            ..ReportInputs::default()
        },
    )
    .unwrap();
    assert!(dir.path().join("sweep.csv").is_file());
    assert!(dir.path().join("figures/threshold_curves.svg").is_file());
    assert_eq!(out.figures.len(), 1);
}

#[test]
fn four_images_two_cases_gives_four_panels_and_stable_tables() {
    let mut corpus = generate_phantom_corpus(4, 64, 10).unwrap();
    // perturb one mask so Dice differs across images
    corpus.samples[0].mask = Array2::zeros((64, 64));
    let out = evaluate(&Graded::default(), &corpus, &opts(64)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let preds = tmp.path().join("predictions");
    write_predictions(&preds, &out, 0.5).unwrap();
    let inputs = ReportInputs {
        eval_records: Some(out.records.clone()),
        predictions_dir: Some(preds),
        q: 2,
        ..ReportInputs::default()
    };
    let a = emit_report(&tmp.path().join("r1"), &inputs).unwrap();
    let b = emit_report(&tmp.path().join("r2"), &inputs).unwrap();
    assert_eq!(a.panels.len(), 4);
    let img = image::open(&a.panels[0]).unwrap();
    assert_eq!((img.width(), img.height()), (256, 64));
    for (x, y) in a.tables.iter().zip(&b.tables) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}
