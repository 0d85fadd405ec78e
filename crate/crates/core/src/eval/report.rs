//! Report tables and figures from whichever harness outputs are available.

use std::path::{Path, PathBuf};

use plotters::coord::ranged1d::{IntoSegmentedCoord, SegmentValue};
use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{aggregate, fmt_opt, write_eval_records, Aggregates, MetricRecord};
use crate::stats::{write_stats_csv, StatMatrix};
use crate::train::CvSummary;

use super::panels::{load_panel, select_cases};
use super::{write_sweep_csv, SweepResult};

#[derive(Clone, Debug, Default)]
pub struct ReportInputs {
    pub cv: Option<CvSummary>,
    pub stats: Option<StatMatrix>,
    pub eval_records: Option<Vec<MetricRecord>>,
    pub sweep: Option<SweepResult>,
    /// Directory written by `write_predictions`; enables overlay panels.
    pub predictions_dir: Option<PathBuf>,
    /// Number of best and worst cases to render.
    pub q: usize,
}

impl ReportInputs {
    fn is_empty(&self) -> bool {
        self.cv.is_none() && self.stats.is_none() && self.eval_records.is_none() && self.sweep.is_none()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ReportOutput {
    pub tables: Vec<PathBuf>,
    pub figures: Vec<PathBuf>,
    pub panels: Vec<PathBuf>,
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// Writes CSV tables into `out_dir` and figures into `out_dir/figures`.
pub fn emit_report(out_dir: &Path, inputs: &ReportInputs) -> Result<ReportOutput> {
    if inputs.is_empty() {
        return Err(Error::Config(
            "report needs at least one of: cv summary, stats matrix, eval records, sweep".into(),
        ));
    }
    let figures = out_dir.join("figures");
    std::fs::create_dir_all(&figures).map_err(Error::io(&figures))?;
    let mut out = ReportOutput::default();

    if let Some(cv) = &inputs.cv {
        if cv.results.is_empty() {
            return Err(Error::Invalid("cv summary has no results".into()));
        }
        let p = out_dir.join("cv_table.csv");
        write_cv_table(&p, cv)?;
        out.tables.push(p);
        let p = out_dir.join("cv_folds.csv");
        write_cv_folds(&p, cv)?;
        out.tables.push(p);
        let p = figures.join("cv_dice.svg");
        plot_cv_bars(&p, cv)?;
        out.figures.push(p);
    }
    if let Some(stats) = &inputs.stats {
        if stats.model_names.is_empty() {
            return Err(Error::Invalid("stats matrix has no models".into()));
        }
        let p = out_dir.join("stats_matrix.csv");
        write_stats_csv(&p, stats)?;
        out.tables.push(p);
        let p = figures.join("pvalue_heatmap.svg");
        plot_heatmap(&p, stats)?;
        out.figures.push(p);
    }
    if let Some(records) = &inputs.eval_records {
        let p = out_dir.join("eval_records.csv");
        write_eval_records(&p, records)?;
        out.tables.push(p);
        let p = out_dir.join("eval_summary.csv");
        write_eval_summary(&p, records)?;
        out.tables.push(p);
        if let Some(dir) = &inputs.predictions_dir {
            let panel_dir = figures.join("panels");
            std::fs::create_dir_all(&panel_dir).map_err(Error::io(&panel_dir))?;
            let (best, worst) = select_cases(records, inputs.q);
            for (tag, list) in [("best", best), ("worst", worst)] {
                for (rank, r) in list.into_iter().enumerate() {
                    let p = panel_dir.join(format!("{tag}_{:02}_{}.png", rank + 1, r.sample_id));
                    load_panel(dir, &r.sample_id)?.save(&p)?;
                    out.panels.push(p);
                }
            }
        }
    }
    if let Some(sweep) = &inputs.sweep {
        let p = out_dir.join("sweep.csv");
        write_sweep_csv(&p, sweep)?;
        out.tables.push(p);
        let p = figures.join("threshold_curves.svg");
        plot_sweep(&p, sweep)?;
        out.figures.push(p);
    }
    Ok(out)
}

fn write_cv_table(path: &Path, cv: &CvSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model", "params", "k", "mean_dice", "std_dice", "mean_iou", "std_iou", "mean_recall", "std_recall",
    ])?;
    for r in &cv.results {
        w.write_record([
            r.model_name.to_string(),
            r.params.to_string(),
            r.k.to_string(),
            r.mean_dice.to_string(),
            r.std_dice.to_string(),
            fmt_opt(r.mean_iou),
            fmt_opt(r.std_iou),
            fmt_opt(r.mean_recall),
            fmt_opt(r.std_recall),
        ])?;
    }
    w.flush().map_err(Error::io(path))?;
    Ok(())
}

fn write_cv_folds(path: &Path, cv: &CvSummary) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "fold", "best_epoch", "dice", "iou", "recall"])?;
    for r in &cv.results {
        for f in &r.fold_results {
            w.write_record([
                r.model_name.to_string(),
                f.fold_index.to_string(),
                f.best_epoch.to_string(),
                f.best_dice.to_string(),
                fmt_opt(f.iou_at_best),
                fmt_opt(f.recall_at_best),
            ])?;
        }
    }
    w.flush().map_err(Error::io(path))?;
    Ok(())
}

/// Aggregates over all images and over images with a non-empty mask.
fn write_eval_summary(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let annotated: Vec<MetricRecord> = records
        .iter()
        .filter(|r| r.counts.tp + r.counts.fn_ > 0)
        .cloned()
        .collect();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["subset", "metric", "mean", "std", "n_included"])?;
    let mut emit = |subset: &str, a: &Aggregates| -> Result<()> {
        for (name, s) in [("dice", a.dice), ("iou", a.iou), ("recall", a.recall)] {
            w.write_record([subset, name, &fmt_opt(s.mean), &fmt_opt(s.std), &s.n_included.to_string()])?;
        }
        Ok(())
    };
    emit("all", &aggregate(records)?)?;
    if !annotated.is_empty() {
        emit("annotated", &aggregate(&annotated)?)?;
    }
    drop(emit);
    w.flush().map_err(Error::io(path))?;
    Ok(())
}

fn plot_cv_bars(path: &Path, cv: &CvSummary) -> Result<()> {
    let n = cv.results.len();
    // Segmented integer ranges are inclusive of their end.
    let names: Vec<String> = cv.results.iter().map(|r| r.model_name.to_string()).collect();
    let root = SVGBackend::new(path, (160 * n.max(3) as u32 + 120, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Cross-validation Dice per model", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(60)
        .y_label_area_size(50)
        .build_cartesian_2d((0..n - 1).into_segmented(), 0.0..1.0f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .y_desc("Dice")
        .x_labels(n + 1)
        .x_label_formatter(&|v| match v {
            SegmentValue::CenterOf(i) | SegmentValue::Exact(i) => names.get(*i).cloned().unwrap_or_default(),
            SegmentValue::Last => String::new(),
        })
        .draw()
        .map_err(plot_err)?;
    let bar = RGBColor(70, 130, 180);
    chart
        .draw_series(cv.results.iter().enumerate().map(|(i, r)| {
            let mut rect = Rectangle::new(
                [(SegmentValue::Exact(i), 0.0), (SegmentValue::Exact(i + 1), r.mean_dice)],
                bar.mix(0.6).filled(),
            );
            rect.set_margin(0, 0, 20, 20);
            rect
        }))
        .map_err(plot_err)?;
    chart
        .draw_series(cv.results.iter().enumerate().map(|(i, r)| {
            ErrorBar::new_vertical(
                SegmentValue::CenterOf(i),
                (r.mean_dice - r.std_dice).max(0.0),
                r.mean_dice,
                (r.mean_dice + r.std_dice).min(1.0),
                BLACK.stroke_width(2),
                12,
            )
        }))
        .map_err(plot_err)?;
    chart
        .draw_series(cv.results.iter().enumerate().flat_map(|(i, r)| {
            r.fold_results
                .iter()
                .map(move |f| Circle::new((SegmentValue::CenterOf(i), f.best_dice), 3, BLACK.filled()))
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn plot_heatmap(path: &Path, stats: &StatMatrix) -> Result<()> {
    let n = stats.model_names.len();
    let cell = 110u32;
    let root = SVGBackend::new(path, (cell * n as u32 + 200, cell * n as u32 + 140)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let names = &stats.model_names;
    let label = |v: &SegmentValue<usize>| match v {
        SegmentValue::CenterOf(i) | SegmentValue::Exact(i) => names.get(*i).cloned().unwrap_or_default(),
        SegmentValue::Last => String::new(),
    };
    let mut chart = ChartBuilder::on(&root)
        .caption("Bonferroni-adjusted Wilcoxon p-values", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(60)
        .y_label_area_size(150)
        .build_cartesian_2d((0..n - 1).into_segmented(), (0..n - 1).into_segmented())
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_labels(n + 1)
        .y_labels(n + 1)
        .x_label_formatter(&label)
        .y_label_formatter(&label)
        .draw()
        .map_err(plot_err)?;
    // Rows are drawn top-down so the matrix reads like a table.
    let row = |i: usize| n - 1 - i;
    chart
        .draw_series((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| {
            let color = match stats.adjusted_p[i][j] {
                Some(p) => {
                    let t = (1.0 - p).clamp(0.0, 1.0);
                    RGBColor(255, (255.0 * (1.0 - 0.8 * t)) as u8, (255.0 * (1.0 - 0.8 * t)) as u8)
                }
                None => RGBColor(220, 220, 220),
            };
            Rectangle::new(
                [(SegmentValue::Exact(j), SegmentValue::Exact(row(i))), (SegmentValue::Exact(j + 1), SegmentValue::Exact(row(i) + 1))],
                color.filled(),
            )
        }))
        .map_err(plot_err)?;
    chart
        .draw_series((0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter_map(|(i, j)| {
            stats.adjusted_p[i][j].map(|p| {
                Text::new(
                    format!("{p:.3}"),
                    (SegmentValue::CenterOf(j), SegmentValue::CenterOf(row(i))),
                    ("sans-serif", 14).into_font(),
                )
            })
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn plot_sweep(path: &Path, sweep: &SweepResult) -> Result<()> {
    let root = SVGBackend::new(path, (640, 440)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let lo = sweep.thresholds.first().copied().unwrap_or(0.0);
    let hi = sweep.thresholds.last().copied().unwrap_or(1.0);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.05, hi + 0.05) };
    let mut chart = ChartBuilder::on(&root)
        .caption("Metrics across decision thresholds", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(lo..hi, 0.0..1.0f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("threshold")
        .y_desc("mean score")
        .draw()
        .map_err(plot_err)?;
    let series: [(&str, RGBColor, fn(&super::SweepPoint) -> Option<f64>); 3] = [
        ("Dice", RGBColor(31, 119, 180), |p| p.dice.mean),
        ("IoU", RGBColor(255, 127, 14), |p| p.iou.mean),
        ("Recall", RGBColor(44, 160, 44), |p| p.recall.mean),
    ];
    for (name, color, get) in series {
        let pts: Vec<(f64, f64)> = sweep
            .per_threshold
            .iter()
            .filter_map(|p| get(p).map(|v| (p.threshold, v)))
            .collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
