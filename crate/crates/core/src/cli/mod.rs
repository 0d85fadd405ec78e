//! Command-line workflow: one subcommand per phase.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use config::{DataConfig, ExperimentConfig, PhantomSpec, Profile};

use crate::dataset::{save_corpus, split_kfold, Corpus};
use crate::error::{Error, Result};
use crate::eval::{
    emit_report, evaluate_checkpoint, parse_threshold_grid, read_sweep_csv, threshold_sweep, write_predictions,
    write_sweep_csv, EvalOptions, EvalSummary, ReportInputs, PREDICTIONS_DIR,
};
use crate::metrics::{read_eval_records, write_eval_records};
use crate::model::{
    build_model, estimate_flops, load_checkpoint, save_checkpoint, write_complexity_csv, CheckpointMeta, ModelKind,
    ModelSpec, SegModel,
};
use crate::stats::{pairwise_compare, write_stats_csv, ZeroPolicy};
use crate::train::{
    read_cv_summary, run_cv, select_best, train_full, write_cv_summary, CsvTrainLog, CvSummary, EpochLog,
    TrainObserver,
};

pub const OUTPUT_ENV: &str = "MAMMOSEG_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "mammoseg", version, about = "Lightweight mammographic lesion segmentation benchmark")]
pub struct Cli {
    /// TOML file merged over the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    pub profile: Profile,
    /// Output root; overrides the config's `output_dir`.
    #[arg(long, global = true, env = OUTPUT_ENV)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded execution. The harness never spawns workers, so this
    /// only records the request in the manifest.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the phantom train and shifted external corpora to disk.
    PhantomGen {
        /// Defaults to `<output>/phantom`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-fold cross-validation for every configured model.
    TrainCv {
        /// Comma-separated model keys; overrides the config list.
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
    },
    /// Pick the best model from `cv_summary.json` and retrain it on the full corpus.
    SelectTrainFull,
    /// Per-image metrics on the external corpus at one threshold.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        /// External corpus root; overrides the config.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Metrics across a threshold grid from a single inference pass.
    Sweep {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Grid as `start:stop:step`, e.g. `0.1:0.9:0.1`.
        #[arg(long)]
        thresholds: Option<String>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Tables and figures from whatever artifacts exist under the output root.
    Report {
        /// Best and worst cases to render as overlay panels.
        #[arg(long)]
        cases: Option<usize>,
    },
    /// Parameter and FLOP counts for every model.
    Complexity {
        #[arg(long, default_value_t = 1024)]
        side: usize,
    },
}

/// Parses `args`, runs the command, and maps errors to exit codes:
/// 2 for configuration or validation problems, 3 for runtime failures.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = ExperimentConfig::load(cli.profile, cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.output {
        cfg.output_dir = out.clone();
    }
    if let Command::TrainCv { models: Some(m) } = &cli.command {
        cfg.models = m.clone();
    }
    let ctx = Context::new(cfg, cli.deterministic)?;
    match cli.command {
        Command::PhantomGen { out } => ctx.phantom_gen(out),
        Command::TrainCv { .. } => ctx.train_cv(),
        Command::SelectTrainFull => ctx.select_train_full(),
        Command::Eval {
            checkpoint,
            threshold,
            corpus,
        } => ctx.eval(checkpoint, threshold, corpus),
        Command::Sweep {
            checkpoint,
            thresholds,
            corpus,
        } => ctx.sweep(checkpoint, thresholds, corpus),
        Command::Report { cases } => ctx.report(cases),
        Command::Complexity { side } => ctx.complexity(side),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: &'a str,
    deterministic: bool,
    config: &'a ExperimentConfig,
}

/// Written by `select-train-full`, read by `eval` and `sweep`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Selection {
    pub config_hash: String,
    pub winner: ModelKind,
    pub cv_mean_dice: f64,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config_hash: String,
    pub checkpoint_model: String,
    pub corpus: String,
    pub sweep: crate::eval::SweepResult,
}

struct Context {
    cfg: ExperimentConfig,
    hash: String,
    out: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::io(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{} is malformed: {e}", path.display())))
}

/// Saves each fold's best weights under `checkpoints/cv/`.
struct FoldCheckpoints<'a> {
    dir: PathBuf,
    corpus: &'a str,
    hash: &'a str,
    side: usize,
    seed: u64,
}

impl TrainObserver for FoldCheckpoints<'_> {
    fn on_best(&mut self, model: ModelKind, fold: usize, epoch: usize, weights: &SegModel) -> Result<()> {
        let meta = CheckpointMeta {
            spec: weights.spec().clone(),
            epochs: epoch,
            corpus: self.corpus.to_string(),
            config_hash: self.hash.to_string(),
            image_side: self.side,
            seed: self.seed,
        };
        save_checkpoint(&self.dir.join(format!("{model}_fold{fold}.msarc")), weights, &meta)
    }
}

struct Progress;

impl TrainObserver for Progress {
    fn on_epoch(&mut self, model: ModelKind, fold: Option<usize>, e: &EpochLog) -> Result<()> {
        let fold = fold.map(|f| format!("fold {}", f + 1)).unwrap_or_else(|| "full".into());
        log::info!(
            "{model} {fold} epoch {}: loss {:.4} val dice {} lr {:.2e}",
            e.epoch,
            e.train_loss,
            e.val_dice.map(|d| format!("{d:.4}")).unwrap_or_else(|| "-".into()),
            e.lr
        );
        Ok(())
    }
}

impl Context {
    fn new(cfg: ExperimentConfig, deterministic: bool) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash();
        let out = cfg.output_dir.clone();
        std::fs::create_dir_all(&out).map_err(Error::io(&out))?;
        write_json(
            &out.join("manifest.json"),
            &Manifest {
                config_hash: &hash,
                deterministic,
                config: &cfg,
            },
        )?;
        Ok(Self { cfg, hash, out })
    }

    fn phantom_gen(&self, dest: Option<PathBuf>) -> Result<()> {
        let spec = self.cfg.data.phantom.clone().unwrap_or_default();
        let dest = dest.unwrap_or_else(|| self.out.join("phantom"));
        let (train, external) = spec.generate()?;
        for (corpus, sub) in [(&train, "train"), (&external, "external")] {
            let root = dest.join(sub);
            save_corpus(corpus, &root)?;
            println!("{sub}: {} samples in {}", corpus.len(), root.display());
        }
        Ok(())
    }

    fn external(&self, root: Option<PathBuf>) -> Result<Corpus> {
        match root {
            Some(r) => crate::dataset::load_corpus(&r, crate::dataset::CorpusRole::ExternalTest),
            None => self.cfg.external_corpus(),
        }
    }

    fn train_cv(&self) -> Result<()> {
        let corpus = self.cfg.train_corpus()?;
        let config = self.cfg.train_config();
        split_kfold(&corpus, self.cfg.k, config.seed)?.write_csv(&self.out.join("folds.csv"))?;
        let log_path = self.out.join("train_log.csv");
        if log_path.exists() {
            std::fs::remove_file(&log_path).map_err(Error::io(&log_path))?;
        }
        let mut results = Vec::new();
        for kind in self.cfg.model_kinds()? {
            let mut observer = (
                CsvTrainLog::open(&log_path)?,
                (
                    FoldCheckpoints {
                        dir: self.out.join("checkpoints").join("cv"),
                        corpus: &corpus.name,
                        hash: &self.hash,
                        side: config.image_side,
                        seed: config.seed,
                    },
                    Progress,
                ),
            );
            let r = run_cv(&ModelSpec::new(kind), &corpus, self.cfg.k, &config, &mut observer)?;
            println!(
                "{kind}: mean dice {:.4} +/- {:.4} over {} folds",
                r.mean_dice, r.std_dice, r.k
            );
            results.push(r);
        }
        if results.len() >= 2 {
            let matrix = pairwise_compare(&results, ZeroPolicy::default())?;
            write_stats_csv(&self.out.join("stats_matrix.csv"), &matrix)?;
        }
        write_cv_summary(
            &self.out.join("cv_summary.json"),
            &CvSummary {
                config_hash: self.hash.clone(),
                results,
            },
        )
    }

    fn warn_hash(&self, what: &str, other: &str) {
        if other != self.hash {
            log::warn!(
                "{what} was produced under config {other}, the current config hashes to {}",
                self.hash
            );
        }
    }

    fn select_train_full(&self) -> Result<()> {
        let summary = read_cv_summary(&self.out.join("cv_summary.json"))?;
        self.warn_hash("cv_summary.json", &summary.config_hash);
        let winner = select_best(&summary.results)?;
        let mean = summary
            .results
            .iter()
            .find(|r| r.model_name == winner)
            .map(|r| r.mean_dice)
            .unwrap_or(f64::NAN);
        println!("selected {winner} (cv mean dice {mean:.4})");
        let corpus = self.cfg.train_corpus()?;
        let rel = PathBuf::from("checkpoints").join(format!("final_{winner}.msarc"));
        let mut log = (CsvTrainLog::open(&self.out.join("train_log.csv"))?, Progress);
        train_full(
            &ModelSpec::new(winner),
            &corpus,
            &self.cfg.train_config(),
            &self.out.join(&rel),
            &self.hash,
            &mut log,
        )?;
        write_json(
            &self.out.join("selection.json"),
            &Selection {
                config_hash: self.hash.clone(),
                winner,
                cv_mean_dice: mean,
                checkpoint: rel,
            },
        )
    }

    fn checkpoint(&self, explicit: Option<PathBuf>) -> Result<PathBuf> {
        if let Some(p) = explicit {
            return Ok(p);
        }
        let sel_path = self.out.join("selection.json");
        if !sel_path.exists() {
            return Err(Error::Config(format!(
                "no --checkpoint given and {} does not exist; run select-train-full first",
                sel_path.display()
            )));
        }
        let sel: Selection = read_json(&sel_path)?;
        Ok(self.out.join(sel.checkpoint))
    }

    fn eval_options(&self, threshold: f64) -> Result<EvalOptions> {
        crate::metrics::check_threshold(threshold).map_err(|e| Error::Config(e.to_string()))?;
        Ok(EvalOptions {
            threshold,
            policies: self.cfg.metrics,
            image_side: self.cfg.train.image_side,
        })
    }

    fn eval(&self, checkpoint: Option<PathBuf>, threshold: Option<f64>, corpus: Option<PathBuf>) -> Result<()> {
        let ckpt = self.checkpoint(checkpoint)?;
        let opts = self.eval_options(threshold.unwrap_or(self.cfg.threshold))?;
        let corpus = self.external(corpus)?;
        let train_name = self.cfg.train_corpus().ok().map(|c| c.name);
        let out = evaluate_checkpoint(&ckpt, &corpus, &opts, train_name.as_deref(), Some(&self.hash))?;
        let dir = self.out.join("eval");
        std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        write_eval_records(&dir.join("eval_records.csv"), &out.records)?;
        write_predictions(&dir.join(PREDICTIONS_DIR), &out, opts.threshold)?;
        let (_, meta) = load_checkpoint(&ckpt)?;
        write_json(
            &dir.join("eval_summary.json"),
            &EvalSummary {
                config_hash: self.hash.clone(),
                checkpoint_model: meta.spec.name.to_string(),
                corpus: corpus.name.clone(),
                threshold: opts.threshold,
                policies: opts.policies,
                all_images: out.aggregates,
                annotated_images: out.aggregates_annotated,
            },
        )?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into());
        println!(
            "{} on {} at {}: dice {} iou {} recall {} ({} images)",
            meta.spec.name,
            corpus.name,
            opts.threshold,
            fmt(out.aggregates.dice.mean),
            fmt(out.aggregates.iou.mean),
            fmt(out.aggregates.recall.mean),
            out.records.len()
        );
        Ok(())
    }

    fn sweep(&self, checkpoint: Option<PathBuf>, grid: Option<String>, corpus: Option<PathBuf>) -> Result<()> {
        let thresholds = match grid {
            Some(g) => parse_threshold_grid(&g)?,
            None => self.cfg.thresholds.clone(),
        };
        let ckpt = self.checkpoint(checkpoint)?;
        let (model, meta) = load_checkpoint(&ckpt)?;
        let train_name = self.cfg.train_corpus().ok().map(|c| c.name);
        crate::model::check_provenance(&meta, train_name.as_deref(), Some(&self.hash));
        let corpus = self.external(corpus)?;
        let opts = self.eval_options(self.cfg.threshold)?;
        let sweep = threshold_sweep(&model, &corpus, &thresholds, &opts)?;
        let dir = self.out.join("sweep");
        std::fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        write_sweep_csv(&dir.join("sweep.csv"), &sweep)?;
        write_json(
            &dir.join("sweep.json"),
            &SweepSummary {
                config_hash: self.hash.clone(),
                checkpoint_model: meta.spec.name.to_string(),
                corpus: corpus.name.clone(),
                sweep: sweep.clone(),
            },
        )?;
        for p in &sweep.per_threshold {
            println!(
                "{:.2}  dice {:.4}  iou {:.4}  recall {:.4}",
                p.threshold,
                p.dice.mean.unwrap_or(f64::NAN),
                p.iou.mean.unwrap_or(f64::NAN),
                p.recall.mean.unwrap_or(f64::NAN)
            );
        }
        Ok(())
    }

    fn report(&self, cases: Option<usize>) -> Result<()> {
        let mut inputs = ReportInputs {
            q: cases.unwrap_or(self.cfg.report_cases),
            ..ReportInputs::default()
        };
        let cv_path = self.out.join("cv_summary.json");
        if cv_path.exists() {
            let cv = read_cv_summary(&cv_path)?;
            self.warn_hash("cv_summary.json", &cv.config_hash);
            if cv.results.len() >= 2 {
                inputs.stats = Some(pairwise_compare(&cv.results, ZeroPolicy::default())?);
            }
            inputs.cv = Some(cv);
        }
        let eval_dir = self.out.join("eval");
        let records = eval_dir.join("eval_records.csv");
        if records.exists() {
            inputs.eval_records = Some(read_eval_records(&records)?);
            let summary = eval_dir.join("eval_summary.json");
            if summary.exists() {
                let s: EvalSummary = read_json(&summary)?;
                self.warn_hash("eval_summary.json", &s.config_hash);
            }
            let preds = eval_dir.join(PREDICTIONS_DIR);
            if preds.is_dir() {
                inputs.predictions_dir = Some(preds);
            }
        }
        let sweep = self.out.join("sweep").join("sweep.csv");
        if sweep.exists() {
            inputs.sweep = Some(read_sweep_csv(&sweep)?);
        }
        let report = emit_report(&self.out.join("report"), &inputs)?;
        for p in report.tables.iter().chain(&report.figures).chain(&report.panels) {
            println!("{}", p.display());
        }
        Ok(())
    }

    fn complexity(&self, side: usize) -> Result<()> {
        let mut reports = Vec::new();
        for kind in ModelKind::ALL {
            let model = build_model(&ModelSpec::random_init(kind), 0)?;
            let r = estimate_flops(&model, (1, side, side))?;
            println!(
                "{:<24} {:>8.3} M params {:>9.2} GFLOPs",
                r.name,
                r.params_total as f64 / 1e6,
                r.flops_total as f64 / 1e9
            );
            reports.push(r);
        }
        write_complexity_csv(&self.out.join("complexity.csv"), &reports)
    }
}
