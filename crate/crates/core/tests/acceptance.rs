//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any hard criterion fails. Criterion 10 is informative only.

use std::cell::RefCell;
use std::collections::HashMap;
use std::process::Command;
use std::time::{Duration, Instant};

use mammoseg::dataset::{generate_phantom_corpus, generate_phantom_corpus_with, split_kfold, Corpus, PhantomConfig, Sample};
use mammoseg::eval::{default_thresholds, evaluate, threshold_sweep, threshold_sweep_uncached, EvalOptions, Predictor};
use mammoseg::losses::{combined_loss, dice_loss, LossConfig};
use mammoseg::metrics::{confusion, dice_score, iou_score, recall_score, EmptyPolicy, MetricPolicies};
use mammoseg::model::{build_model, estimate_flops, ModelKind, ModelSpec};
use mammoseg::preprocess::AugmentPolicy;
use mammoseg::stats::{bonferroni, pairwise_compare, wilcoxon_signed_rank, ZeroPolicy};
use mammoseg::train::{
    run_cv, select_best, train_fold, train_full, weights_digest, write_cv_summary, CVResult, CvSummary, FoldResult,
    NoopObserver, TrainConfig,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    outcome(false, detail)
}

// ---------------------------------------------------------------- 1

const REFERENCE_COMPLEXITY: [(ModelKind, f64, f64); 7] = [
    (ModelKind::UnetResnet34, 24.43, 248.09),
    (ModelKind::MobileNetV2, 6.63, 108.21),
    (ModelKind::MobileNetV2Scse, 6.89, 108.66),
    (ModelKind::EnetResnet18, 13.04, 139.51),
    (ModelKind::FastScnn, 2.26, 10.52),
    (ModelKind::EfficientNetLite, 5.61, 95.23),
    (ModelKind::EfficientNetLiteScse, 5.67, 95.68),
];
const PARAM_TOL: f64 = 0.10;
const FLOP_TOL: f64 = 0.15;

fn complexity() -> Outcome {
    let mut ours = Vec::new();
    let mut out_of_band = Vec::new();
    for (kind, p_ref, f_ref) in REFERENCE_COMPLEXITY {
        let model = match build_model(&ModelSpec::random_init(kind), 0) {
            Ok(m) => m,
            Err(e) => return fail(format!("{kind}: {e}")),
        };
        let r = match estimate_flops(&model, (1, 1024, 1024)) {
            Ok(r) => r,
            Err(e) => return fail(format!("{kind}: {e}")),
        };
        let p = r.params_total as f64 / 1e6;
        let f = r.flops_total as f64 / 1e9;
        if (p - p_ref).abs() > PARAM_TOL * p_ref || (f - f_ref).abs() > FLOP_TOL * f_ref {
            out_of_band.push(format!("{kind} {p:.2}M/{f:.1}G"));
        }
        ours.push((kind, p, p_ref));
    }
    let order = |idx: usize| {
        let mut v = ours.clone();
        v.sort_by(|a, b| if idx == 1 { b.1.total_cmp(&a.1) } else { b.2.total_cmp(&a.2) });
        v.into_iter().map(|x| x.0).collect::<Vec<_>>()
    };
    let same_order = order(1) == order(2);
    outcome(
        out_of_band.is_empty() && same_order,
        format!(
            "7/7 models in ±10% params / ±15% FLOPs: {}; parameter ordering identical: {same_order}",
            if out_of_band.is_empty() { "yes".into() } else { format!("no ({})", out_of_band.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 2

fn losses() -> Outcome {
    let mut bad = Vec::new();
    let perfect = dice_loss(&[1.0f64, 0.0, 1.0, 0.0], &[1u8, 0, 1, 0], 1.0).unwrap();
    if perfect.abs() > 1e-9 {
        bad.push(format!("perfect {perfect}"));
    }
    let empty = dice_loss(&[0.0f64; 4], &[0u8; 4], 1.0).unwrap();
    if empty.abs() > 1e-9 {
        bad.push(format!("empty {empty}"));
    }
    // 1 - (2·2 + ε)/(1 + 4 + ε), which rounds to 0.2 at ε = 1e-6
    let eps = 1e-6;
    let half = dice_loss(&[0.5f64; 4], &[1u8; 4], eps).unwrap();
    let hand = 1.0 - (4.0 + eps) / (5.0 + eps);
    if (half - hand).abs() > 1e-9 || (half - 0.2).abs() > 1e-6 {
        bad.push(format!("half-confidence {half}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = LossConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let z: Vec<f64> = (0..64).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let g: Vec<u8> = (0..64).map(|_| rng.random_bool(0.3) as u8).collect();
        let analytic = combined_loss(&z, &g, &cfg).unwrap().grad;
        let h = 1e-5;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..64 {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (combined_loss(&zp, &g, &cfg).unwrap().value - combined_loss(&zm, &g, &cfg).unwrap().value) / (2.0 * h);
            num += (analytic[i] - fd).powi(2);
            den += fd.powi(2);
        }
        worst = worst.max(num.sqrt() / den.sqrt().max(1e-12));
    }
    if worst > 1e-3 {
        bad.push(format!("gradient rel err {worst:.2e}"));
    }
    outcome(
        bad.is_empty(),
        format!("hand cases within 1e-9; worst gradient relative error {worst:.2e} over 100 8x8 cases {}", bad.join(" ")),
    )
}

// ---------------------------------------------------------------- 3

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    let mut identity_checked = 0;
    let mut identity_bad = 0;
    for _ in 0..1000 {
        let dp = rng.random_range(0.0..0.6);
        let dg = rng.random_range(0.0..0.6);
        let pred: Vec<u8> = (0..1024).map(|_| rng.random_bool(dp) as u8).collect();
        let gt: Vec<u8> = (0..1024).map(|_| rng.random_bool(dg) as u8).collect();
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..1024 {
            match (pred[i], gt[i]) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => tn += 1,
            }
        }
        let c = confusion(&pred, &gt).unwrap();
        if (c.tp, c.fp, c.fn_, c.tn) != (tp, fp, fn_, tn) {
            mismatches += 1;
            continue;
        }
        let dice = (tp + fp + fn_ > 0).then(|| 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64);
        let iou = (tp + fp + fn_ > 0).then(|| tp as f64 / (tp + fp + fn_) as f64);
        let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
        let d = dice_score(c, EmptyPolicy::Exclude);
        let j = iou_score(c, EmptyPolicy::Exclude);
        if d != dice || j != iou || recall_score(c, EmptyPolicy::Exclude) != recall {
            mismatches += 1;
        }
        if let (Some(d), Some(j)) = (d, j) {
            identity_checked += 1;
            if (d - 2.0 * j / (1.0 + j)).abs() > 1e-12 {
                identity_bad += 1;
            }
        }
    }
    outcome(
        mismatches == 0 && identity_bad == 0,
        format!("1000 random 32x32 pairs: {mismatches} oracle mismatches; dice=2iou/(1+iou) violated in {identity_bad}/{identity_checked}"),
    )
}

// ---------------------------------------------------------------- 4

/// Replays fixed probability maps by sample id.
struct Replay(HashMap<String, Vec<f32>>, RefCell<usize>);

impl Predictor for Replay {
    fn predict(&self, samples: &[Sample]) -> mammoseg::Result<Vec<Vec<f32>>> {
        *self.1.borrow_mut() += samples.len();
        Ok(samples.iter().map(|s| self.0[&s.id].clone()).collect())
    }
}

fn monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut samples = Vec::new();
    let mut maps = HashMap::new();
    for i in 0..50 {
        let id = format!("r{i:02}");
        let image = Array2::from_shape_fn((32, 32), |_| rng.random::<f32>());
        let mask = Array2::from_shape_fn((32, 32), |_| rng.random_bool(0.3) as u8);
        maps.insert(id.clone(), (0..1024).map(|_| rng.random::<f32>()).collect());
        samples.push(Sample::new(id, image, mask).unwrap());
    }
    let corpus = Corpus {
        name: "random".into(),
        samples,
        role: mammoseg::dataset::CorpusRole::ExternalTest,
    };
    let opts = EvalOptions {
        threshold: 0.5,
        policies: MetricPolicies::default(),
        image_side: 32,
    };
    let cached_p = Replay(maps.clone(), RefCell::new(0));
    let cached = threshold_sweep(&cached_p, &corpus, &default_thresholds(), &opts).unwrap();
    let fresh = threshold_sweep_uncached(&Replay(maps, RefCell::new(0)), &corpus, &default_thresholds(), &opts).unwrap();
    let mut violations = 0;
    for s in 0..50 {
        let r: Vec<f64> = cached.records.iter().map(|t| t[s].recall.unwrap()).collect();
        violations += r.windows(2).filter(|w| w[1] > w[0]).count();
    }
    let means: Vec<f64> = cached.per_threshold.iter().map(|p| p.recall.mean.unwrap()).collect();
    violations += means.windows(2).filter(|w| w[1] > w[0]).count();
    let equal = cached == fresh && cached.records == fresh.records;
    let single_pass = *cached_p.1.borrow() == 50;
    outcome(
        violations == 0 && equal && single_pass,
        format!("50 maps x 9 thresholds: {violations} recall increases; cached == re-inferred: {equal}; one inference per image: {single_pass}"),
    )
}

// ---------------------------------------------------------------- 5

fn cv_protocol() -> Outcome {
    let corpus = generate_phantom_corpus(40, 128, 5).unwrap();
    let config = TrainConfig {
        epochs: 3,
        batch_size: 4,
        learning_rate: 3e-3,
        image_side: 128,
        seed: 5,
        ..TrainConfig::default()
    };
    let folds = split_kfold(&corpus, 5, config.seed).unwrap();
    let mut seen = vec![0usize; corpus.len()];
    let mut partition_ok = folds.fold_sizes() == vec![8; 5];
    for f in 0..5 {
        let (tr, va) = folds.split(&corpus, f).unwrap();
        partition_ok &= va.len() == 8 && tr.len() == 32 && tr.iter().all(|i| !va.contains(i));
        for i in va {
            seen[i] += 1;
        }
    }
    partition_ok &= seen.iter().all(|&c| c == 1);

    let spec = ModelSpec::random_init(ModelKind::FastScnn);
    let fresh = weights_digest(build_model(&spec, config.seed).unwrap().params());
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    let mut result = None;
    for run in 0..2 {
        let r = match run_cv(&spec, &corpus, 5, &config, &mut NoopObserver) {
            Ok(r) => r,
            Err(e) => return fail(e.to_string()),
        };
        let p = dir.path().join(format!("cv{run}.json"));
        write_cv_summary(
            &p,
            &CvSummary {
                config_hash: "acceptance".into(),
                results: vec![r.clone()],
            },
        )
        .unwrap();
        bytes.push(std::fs::read(&p).unwrap());
        result = Some(r);
    }
    let r = result.unwrap();
    let fresh_init = r.fold_results.iter().all(|f| f.init_digest == fresh);
    let best_ok = r.fold_results.iter().all(|f| {
        let max = f.epoch_log.iter().filter_map(|e| e.val_dice).fold(f64::NEG_INFINITY, f64::max);
        let at = &f.epoch_log[f.best_epoch - 1];
        f.best_dice == max && at.val_dice == Some(f.best_dice) && at.val_iou == f.iou_at_best && at.val_recall == f.recall_at_best
    });
    let identical = bytes[0] == bytes[1];
    outcome(
        partition_ok && fresh_init && best_ok && identical,
        format!(
            "folds partition 40 into 5x8: {partition_ok}; fresh init each fold: {fresh_init}; best = max of log with same-epoch IoU/recall: {best_ok}; cv_summary byte-identical: {identical}"
        ),
    )
}

// ---------------------------------------------------------------- 6

fn smoke(kind: ModelKind) -> Outcome {
    let corpus = generate_phantom_corpus(8, 128, 0).unwrap();
    let config = TrainConfig {
        epochs: 30,
        batch_size: 4,
        learning_rate: 3e-3,
        image_side: 128,
        augment: AugmentPolicy::identity(),
        ..TrainConfig::default()
    };
    let t = Instant::now();
    match train_fold(&ModelSpec::random_init(kind), &corpus.samples, &corpus.samples, &config, 0, &mut NoopObserver) {
        Ok(r) => {
            let secs = t.elapsed().as_secs_f64();
            outcome(
                r.best_dice >= 0.8 && secs < 900.0,
                format!("{kind}: best Dice {:.4} at epoch {} (need >= 0.8), {secs:.0} s", r.best_dice, r.best_epoch),
            )
        }
        Err(e) => fail(format!("{kind}: {e}")),
    }
}

fn learnability() -> Outcome {
    let a = smoke(ModelKind::FastScnn);
    let b = smoke(ModelKind::MobileNetV2Scse);
    outcome(a.pass && b.pass, format!("{}; {}", a.detail, b.detail))
}

// ---------------------------------------------------------------- 7

/// Two-sided p by enumerating all sign assignments of ranks 1..n.
fn enumerate_p(diffs: &[i64]) -> (f64, f64) {
    let n = diffs.len();
    let mut abs: Vec<i64> = diffs.iter().map(|d| d.abs()).collect();
    abs.sort();
    let rank = |v: i64| (abs.iter().position(|&a| a == v).unwrap() + 1) as i64;
    let w_plus: i64 = diffs.iter().filter(|&&d| d > 0).map(|&d| rank(d.abs())).sum();
    let total = (n * (n + 1) / 2) as i64;
    let w = w_plus.min(total - w_plus);
    let mut hits = 0u64;
    for mask in 0u32..(1 << n) {
        let wp: i64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| i as i64 + 1).sum();
        if wp.min(total - wp) <= w {
            hits += 1;
        }
    }
    (w as f64, hits as f64 / (1u64 << n) as f64)
}

fn synthetic_cv(kind: ModelKind, folds: &[f64]) -> CVResult {
    let mean = folds.iter().sum::<f64>() / folds.len() as f64;
    CVResult {
        model_name: kind,
        params: 0,
        k: folds.len(),
        seed: 0,
        fold_signature: "synthetic".into(),
        mean_dice: mean,
        std_dice: 0.0,
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

fn wilcoxon() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = 0;
    let mut bad = Vec::new();
    for n in 1..=8usize {
        for _ in 0..12 {
            let mut mags: Vec<i64> = (1..=20).collect();
            for i in (1..mags.len()).rev() {
                mags.swap(i, rng.random_range(0..=i));
            }
            let diffs: Vec<i64> = mags[..n].iter().map(|&m| if rng.random_bool(0.5) { m } else { -m }).collect();
            let x: Vec<f64> = diffs.iter().map(|&d| d as f64).collect();
            let y = vec![0.0; n];
            let r = wilcoxon_signed_rank(&x, &y, ZeroPolicy::WilcoxDrop).unwrap();
            let (w, p) = enumerate_p(&diffs);
            cases += 1;
            if r.statistic != w || (r.p_value - p).abs() > 1e-12 {
                bad.push(format!("{diffs:?}: got ({}, {}) want ({w}, {p})", r.statistic, r.p_value));
            }
        }
    }
    let five = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0], &[0.0; 5], ZeroPolicy::WilcoxDrop).unwrap();
    let five_ok = (five.p_value - 0.0625).abs() < 1e-12;
    let bonf = bonferroni(&[0.01, 0.2], 21).unwrap();
    let bonf_ok = (bonf[0] - 0.21).abs() < 1e-12 && bonf[1] == 1.0;

    // Seven models with five folds each, including one that dominates every fold.
    let kinds = ModelKind::ALL;
    let results: Vec<CVResult> = kinds
        .iter()
        .enumerate()
        .map(|(m, &k)| {
            let folds: Vec<f64> = (0..5).map(|f| 0.3 + 0.05 * m as f64 + 0.01 * ((m * 7 + f * 3) % 5) as f64).collect();
            synthetic_cv(k, &folds)
        })
        .collect();
    let matrix = pairwise_compare(&results, ZeroPolicy::WilcoxDrop).unwrap();
    let min_raw = matrix.pairs().iter().map(|p| p.2).fold(1.0, f64::min);
    let all_above = matrix.pairs().iter().all(|p| p.3 > 0.05);
    let pass = bad.is_empty() && five_ok && bonf_ok && all_above && matrix.n_comparisons == 21;
    outcome(
        pass,
        format!(
            "{cases} tie-free cases match 2^n enumeration ({} mismatches); n=5 all-positive p = {}; Bonferroni(21) 0.01 -> {}, capped {}; 7x5 structure: min raw p {min_raw}, all adjusted > 0.05: {all_above}",
            bad.len(),
            five.p_value,
            bonf[0],
            bonf[1]
        ),
    )
}

// ---------------------------------------------------------------- 8

fn selection() -> Outcome {
    let reference_dice = [
        (ModelKind::UnetResnet34, 0.4532),
        (ModelKind::MobileNetV2, 0.5751),
        (ModelKind::MobileNetV2Scse, 0.5766),
        (ModelKind::EnetResnet18, 0.4938),
        (ModelKind::FastScnn, 0.3675),
        (ModelKind::EfficientNetLite, 0.5655),
        (ModelKind::EfficientNetLiteScse, 0.5510),
    ];
    let results: Vec<CVResult> = reference_dice.iter().map(|&(k, d)| synthetic_cv(k, &[d; 5])).collect();
    let t = Instant::now();
    let winner = select_best(&results).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        winner == ModelKind::MobileNetV2Scse && secs < 1.0,
        format!("reference mean Dice values select {winner}"),
    )
}

// ---------------------------------------------------------------- 9

fn pipeline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let phantom = out.join("phantom");
    let cfg = dir.path().join("desk.toml");
    std::fs::write(
        &cfg,
        format!(
            "[data]\ntrain_root = {:?}\nexternal_root = {:?}\n",
            phantom.join("train"),
            phantom.join("external")
        ),
    )
    .unwrap();
    let steps: [&[&str]; 6] = [
        &["phantom-gen"],
        &["train-cv"],
        &["select-train-full"],
        &["eval", "--threshold", "0.5"],
        &["sweep", "--thresholds", "0.1:0.9:0.1"],
        &["report"],
    ];
    for (i, step) in steps.iter().enumerate() {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_mammoseg"));
        cmd.env("RUST_LOG", "warn").args(["--profile", "desk", "--output"]).arg(&out);
        if i > 0 {
            cmd.arg("--config").arg(&cfg);
        }
        let o = cmd.args(*step).output().unwrap();
        if !o.status.success() {
            return fail(format!(
                "`{}` exited with {:?}: {}",
                step.join(" "),
                o.status.code(),
                String::from_utf8_lossy(&o.stderr).lines().last().unwrap_or("")
            ));
        }
    }
    let selection: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("selection.json")).unwrap()).unwrap();
    let ckpt = out.join(selection["checkpoint"].as_str().unwrap_or(""));
    let required = [
        out.join("cv_summary.json"),
        ckpt,
        out.join("eval/eval_records.csv"),
        out.join("sweep/sweep.csv"),
        out.join("stats_matrix.csv"),
        out.join("report/stats_matrix.csv"),
        out.join("report/figures/cv_dice.svg"),
        out.join("report/figures/pvalue_heatmap.svg"),
        out.join("report/figures/threshold_curves.svg"),
    ];
    let missing: Vec<String> = required.iter().filter(|p| !p.is_file()).map(|p| p.display().to_string()).collect();
    let panels = std::fs::read_dir(out.join("report/figures/panels")).map(|d| d.count()).unwrap_or(0);
    outcome(
        missing.is_empty() && panels > 0,
        format!(
            "6 commands exit 0; winner {}; {} required artifacts missing, {panels} overlay panels",
            selection["winner"],
            missing.len()
        ),
    )
}

// ---------------------------------------------------------------- 10

fn cross_dataset() -> Outcome {
    let a = generate_phantom_corpus(48, 128, 10).unwrap();
    let train = Corpus {
        samples: a.samples[..40].to_vec(),
        ..a.clone()
    };
    let held = Corpus {
        samples: a.samples[40..].to_vec(),
        ..a.clone()
    };
    let shifted = PhantomConfig {
        lesion_contrast: 0.2,
        ..PhantomConfig::default()
    };
    let b = generate_phantom_corpus_with(16, 128, 11, &shifted).unwrap();
    let config = TrainConfig {
        epochs: 20,
        batch_size: 4,
        learning_rate: 3e-3,
        image_side: 128,
        augment: AugmentPolicy::identity(),
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let full = match train_full(
        &ModelSpec::random_init(ModelKind::FastScnn),
        &train,
        &config,
        &dir.path().join("a.msarc"),
        "acceptance",
        &mut NoopObserver,
    ) {
        Ok(f) => f,
        Err(e) => return fail(e.to_string()),
    };
    let opts = EvalOptions {
        threshold: 0.5,
        policies: MetricPolicies::default(),
        image_side: 128,
    };
    let on_a = evaluate(&full.model, &held, &opts).unwrap().aggregates_annotated.unwrap();
    let on_b = evaluate(&full.model, &b, &opts).unwrap().aggregates_annotated.unwrap();
    let (da, db) = (on_a.dice.mean.unwrap(), on_b.dice.mean.unwrap());
    let (ra, rb) = (on_a.recall.mean.unwrap(), on_b.recall.mean.unwrap());
    let dice_drop = (da - db) / da;
    let recall_drop = (ra - rb) / ra;
    outcome(
        db < da && recall_drop < dice_drop,
        format!(
            "annotated images, held-out A -> shifted B: Dice {da:.4} -> {db:.4} ({:+.1}%), recall {ra:.4} -> {rb:.4} ({:+.1}%)",
            -100.0 * dice_drop,
            -100.0 * recall_drop
        ),
    )
}

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(u32, &str, fn() -> Outcome, bool, Duration); 10] = [
        (1, "complexity regression", complexity, true, Duration::from_secs(120)),
        (2, "loss correctness", losses, true, Duration::from_secs(60)),
        (3, "metric oracle equivalence", metrics_oracle, true, Duration::from_secs(60)),
        (4, "threshold monotonicity and caching", monotonicity, true, Duration::from_secs(120)),
        (5, "cross-validation protocol", cv_protocol, true, Duration::from_secs(600)),
        (6, "learnability smoke", learnability, true, Duration::from_secs(1800)),
        (7, "exact Wilcoxon and Bonferroni", wilcoxon, true, Duration::from_secs(60)),
        (8, "selection protocol", selection, true, Duration::from_secs(1)),
        (9, "end-to-end desk pipeline", pipeline, true, Duration::from_secs(45 * 60)),
        (10, "cross-dataset sanity (informative)", cross_dataset, false, Duration::MAX),
    ];
    let mut hard_failures = 0;
    for (id, name, run, hard, budget) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f) && f != id.to_string()) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        let elapsed = t.elapsed();
        let pass = o.pass && elapsed <= budget;
        let tag = match (pass, hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "INFO",
        };
        println!("[{tag}] {id:>2} {name}: {} ({:.1} s)", o.detail, elapsed.as_secs_f64());
        if !pass && hard {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        std::process::exit(1);
    }
}
